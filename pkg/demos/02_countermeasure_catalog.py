"""
Countermeasures checked in isolation
====================================

Each fault model has a small mutation scheme: a program whose single
sensitive instruction carries the fault.  Inserting a countermeasure into
it gives a protected scheme, and exhaustive single-fault exploration tells
whether the countermeasure is adequate.  Exploring faults on the
countermeasure's own code tells how many faults it takes to get past it.
"""

from faultforge import catalog as cat
from faultforge.faults import DLM, EFT, TI

#%%
# Adequacy.  Test duplication cannot stop a then block from running into
# its else block: the duplicated test in the else branch is skipped too.
for cm, model in [("test_dup", TI), ("test_dup", EFT), ("block_sig", TI),
                  ("block_sig", EFT), ("load_dup", DLM)]:
    v = cat.check_adequacy(cat.protected_scheme(cm, model), model)
    line = f"{cm:<10} {model:<4} {v}"
    if v.counterexample is not None:
        t = v.counterexample
        line += f"   e.g. input {t.init} -> result {t.result} undetected"
    print(line)

#%%
print(cat.protected_scheme("block_sig", EFT).source)

#%%
# Protection levels of 1, 2 and 3 instances.  Duplicated tests all read the
# same loaded value, so one data fault defeats any number of copies.
for cm in cat.CM_NAMES:
    for models in cat.MODEL_SETS:
        levels = [str(cat.protection_level(cat.countermeasure_scheme(cm, k), models)) for k in (1, 2, 3)]
        print(f"{cm:<10} {cat.model_key(models):<7} {' '.join(levels)}")

#%%
# The catalog bundles verdicts and per-copy rules for placement.
catalog = cat.default_catalog()
for e in catalog.entries:
    print(e.cm, e.kind, e.model, e.adequacy, e.levels)
