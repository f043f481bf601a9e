"""
Placing countermeasures
=======================

Three strategies protect a PIN verification routine against up to n test
inversions: every injection point (naive), every point that occurs in an
attack (all), or one well-chosen point per attack (single).  The hardened
program is then explored again to check that nothing got worse and that
the protected attacks are gone.
"""

from faultforge import mini_ir as ir
from faultforge.placement import harden, harden_single, verify_hardening
from faultforge.harness import bundled_harness
from faultforge.robustness import vuln

vp = bundled_harness("vp4")
print(vp.source)
print("injection points:", [ip.id for ip in ir.enumerate_injection_points(vp.program, vp.models)])

#%%
print("n  naive  all  single")
for n in (1, 2, 3, 4):
    a = vp.explore(max_order=n)
    counts = [harden(s, vp.program, a, n).added_cm_count for s in ("naive", "all", "single")]
    print(n, *counts)

#%%
# The single strategy picks the loop exit, the byte test and the final
# decision; every attack of up to n faults goes through one of them.
a = vp.explore(max_order=2)
result, _ = harden_single(vp.program, a, 2)
for p in result.ip_protected:
    print(p.ip, p.cm, "x", p.copies)
report = verify_hardening(vp.program, result, vp, 2, a)
print("attacks before:", report.old_counts, "after:", report.new_counts)
print("verified:", report.verified)

#%%
print(ir.format_program(result.hardened))

#%%
# When data loads can be faulted as well, duplicated tests only count for
# one fault.  Degraded placement still inserts them and reports the lower
# residual level.
bac = bundled_harness("bac_v1").with_overrides(models=["ti", "dlm"])
a = bac.explore(max_order=2)
print(vuln(a).to_json())
r, rep = harden_single(bac.program, a, 2, degraded=True)
print("residual level:", rep.residual_level, "unprotected attacks:", len(rep.unprotected_attacks))
