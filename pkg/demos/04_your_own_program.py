"""
Analysing a program of your own
===============================

A harness can be built in code as well as loaded from TOML.  Here a small
authentication gate reads a stored flag through a marked load, so both
test inversions and data-load modifications apply.
"""

import tempfile
from pathlib import Path

from faultforge.harness import harness_from_dict
from faultforge.robustness import hotspots_text, hotspots, minimal_attacks, vuln_text, vuln

SOURCE = """
fn gate(flag: int, pin_ok: bool) -> int {
    let f = load(flag);
    if (pin_ok) {
        if (f == 1) { return BOOL_TRUE; }
    }
    return BOOL_FALSE;
}
"""

work = Path(tempfile.mkdtemp())
(work / "gate.mc").write_text(SOURCE)
h = harness_from_dict({
    "program": "gate.mc",
    "inputs": [{"flag": 0, "pin_ok": False}, {"flag": 1, "pin_ok": False}],
    "models": ["ti", "dlm"],
    "dlm_payloads": [1],
    "max_order": 2,
    "oracle": "result == BOOL_TRUE",
}, base=work)

#%%
a = h.explore()
print(vuln_text(vuln(a)))
print(hotspots_text(hotspots(a)))
for atk in minimal_attacks(a.all_attacks()):
    print(" ".join(o.label() for o in atk))
