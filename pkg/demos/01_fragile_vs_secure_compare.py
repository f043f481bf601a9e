"""
Fragile and hardened byte-array comparison
==========================================

Two versions of the comparison routine used by a PIN check.  The attacker
wants two arrays that differ in every byte to compare equal.  We count the
successful attacks by number of injected test inversions, look at which
conditional tests the attacks go through, and compare the two versions.
"""

from faultforge.harness import bundled_harness
from faultforge.robustness import (
    compare_robustness, hotspots, hotspots_text, minimal_attacks, robustness_level, vuln,
    vuln_text,
)

fragile = bundled_harness("bac_v1")
secure = bundled_harness("bac_v2")
print(fragile.source)

#%%
# Explore every fault plan of up to 8 test inversions.
a1 = fragile.explore()
a2 = secure.explore()
print("fragile:\n" + vuln_text(vuln(a1)))
print("secure:\n" + vuln_text(vuln(a2)))

#%%
# The attacks of the fragile version, shortest first.  Exiting the loop
# early takes one fault; otherwise each differing byte needs its own.
for atk in a1.all_attacks():
    print(len(atk), " ".join(o.label() for o in atk))
print("minimal:", len(minimal_attacks(a1.all_attacks())), "of", len(a1.all_attacks()))

#%%
# Where do attacks on the secure version inject?  The duplicated test on
# line 6 never takes part in a successful attack.
print(hotspots_text(hotspots(a2)))

#%%
# The secure version resists one fault and never has more attacks than the
# fragile one up to any number of faults.
print("robust up to", robustness_level(vuln(a2, "i0")), "fault(s)")
print("secure <= fragile:", compare_robustness(vuln(a2), vuln(a1)).describe())
print("fragile <= secure:", compare_robustness(vuln(a1), vuln(a2)).describe())
