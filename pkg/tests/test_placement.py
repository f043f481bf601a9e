import pytest

from faultforge import mini_ir as ir
from faultforge.explorer import NOMINAL_EXIT, Oracle, UnreachableFault, run_trace
from faultforge.faults import DLM, TI, FaultPlan
from faultforge.harness import BENCHMARKS, bundled_harness
from faultforge.placement import (
    InstrumentationError, PlacementResult, harden, harden_all, harden_iteratively, harden_naive,
    harden_single, verify_hardening,
)
from faultforge.robustness import compare_robustness, vuln

TWO_IPS = """fn f(a: int, b: int) -> int {
    let r = 0;
    if (a > 0) { r = r + 1; }
    if (b > 0) { r = r + 2; }
    return r;
}
"""


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_naive_is_ips_times_n(vp4, n):
    assert harden_naive(vp4.program, n).added_cm_count == 8 * n


def test_naive_small_cases():
    p = ir.parse_program(TWO_IPS)
    assert harden_naive(p, 3).added_cm_count == 6
    r = harden_naive(p, 0)
    assert r.added_cm_count == 0 and r.hardened == p


def test_all_counts(vp4, fu_toy):
    assert harden_all(vp4.program, vp4.explore(max_order=2), 2).added_cm_count == 8
    ti = fu_toy.with_overrides(models=[TI])
    assert harden_all(ti.program, ti.explore(max_order=1), 1).added_cm_count == 0
    assert harden_all(vp4.program, [], 3).added_cm_count == 0


def test_single_vp4(vp4):
    r, rep = harden_single(vp4.program, vp4.explore(max_order=4), 4)
    assert r.added_cm_count == 12
    assert [p.copies for p in r.ip_protected] == [4, 4, 4]
    assert rep.residual_level == 4 and rep.unprotected_attacks == []


def test_single_fragile_compare(bac_v1):
    a = bac_v1.explore(max_order=1)
    r, rep = harden_single(bac_v1.program, a, 1)
    assert [(p.ip, p.copies) for p in r.ip_protected] == [("IP4", 1)]
    assert r.added_cm_count == 1
    assert r.protected_attacks == a.all_attacks()


def test_single_empty():
    p = ir.parse_program(TWO_IPS)
    r, rep = harden_single(p, [], 2)
    assert r.added_cm_count == 0 and r.protected_attacks == [] and r.hardened == p


def test_verify_fragile(bac_v1):
    a = bac_v1.explore(max_order=1)
    r, _ = harden_single(bac_v1.program, a, 1)
    rep = verify_hardening(bac_v1.program, r, bac_v1, 1, a)
    assert rep.verified
    assert rep.new_counts == {"i0": [0, 0]}


def test_secure_version_compares_better(bac_v1_analysis, bac_v2_analysis):
    assert compare_robustness(vuln(bac_v2_analysis), vuln(bac_v1_analysis)).holds
    assert not compare_robustness(vuln(bac_v1_analysis), vuln(bac_v2_analysis)).holds


def test_empty_placement_verifies(bac_v2):
    r = PlacementResult("single", 2, [], [], bac_v2.program)
    rep = verify_hardening(bac_v2.program, r, bac_v2, 2)
    assert rep.verified and rep.new_counts == rep.old_counts


def test_nominal_divergence_is_fatal(bac_v1):
    other = ir.parse_program(bac_v1.source.replace("result = BOOL_FALSE;", "result = 3;"))
    r = PlacementResult("single", 1, [], [], other)
    with pytest.raises(InstrumentationError):
        verify_hardening(bac_v1.program, r, bac_v1, 1)


@pytest.mark.parametrize("name", BENCHMARKS)
@pytest.mark.parametrize("n", [1, 2, 3])
def test_strategy_ordering(name, n):
    h = bundled_harness(name)
    a = h.explore(max_order=n)
    naive, all_, single = (harden(s, h.program, a, n).added_cm_count for s in ("naive", "all", "single"))
    assert single <= all_ <= naive


@pytest.mark.parametrize("name", BENCHMARKS)
def test_protected_attacks_are_stopped(name):
    h = bundled_harness(name)
    n = 2
    a = h.explore(max_order=n)
    r, _ = harden_single(h.program, a, n)
    holds = Oracle(h.oracle).compile(r.hardened)
    for atk in r.protected_attacks:
        for x in a.per_input:
            if atk not in x.attacks:
                continue
            try:
                t = run_trace(r.hardened, x.init, FaultPlan(atk))
            except UnreachableFault:
                continue
            assert not (t.status == NOMINAL_EXIT and holds(t))


@pytest.mark.parametrize("name", ["bac_v1", "vp4"])
def test_full_protection_removes_all_attacks(name):
    h = bundled_harness(name)
    for n in (1, 2):
        a = h.explore(max_order=n)
        r, rep = harden_single(h.program, a, n)
        assert r.protected_attacks == a.all_attacks() and a.complete
        v = verify_hardening(h.program, r, h, n, a)
        assert all(sum(row) == 0 for row in v.new_counts.values())


def test_degraded_mode_lowers_residual_level(bac_v1):
    # Once data loads can be faulted too, test duplication is worth one fault,
    # and the loop exit attack has no other candidate.
    h = bac_v1.with_overrides(models=[TI, DLM])
    a = h.explore(max_order=2)
    r, rep = harden_single(h.program, a, 2)
    assert rep.unprotected_attacks and rep.residual_level == 0
    assert "IP4" not in [p.ip for p in r.ip_protected]
    d, drep = harden_single(h.program, a, 2, degraded=True)
    assert drep.residual_level == 1
    assert [p for p in d.ip_protected if p.ip == "IP4"][0].sufficient is False


def test_iterative_hardening_terminates(bac_v1):
    rounds = harden_iteratively(bac_v1.program, bac_v1, 2, max_iterations=3)
    assert 1 <= len(rounds) <= 3
    last = rounds[-1].hardened
    assert vuln(bac_v1.explore(last, 2), "i0") == (0, 0, 0)
