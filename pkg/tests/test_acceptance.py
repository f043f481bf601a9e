"""Acceptance criteria, one PASS/FAIL line each.

Run with pytest (lines appear in the terminal summary) or directly:
``python tests/test_acceptance.py``.
"""

import math
import random
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from conftest import ACCEPTANCE  # noqa: E402
from faultforge import catalog as cat  # noqa: E402
from faultforge import mini_ir as ir  # noqa: E402
from faultforge.explorer import explore  # noqa: E402
from faultforge.faults import DLM, EFT, TI, FaultOccurrence  # noqa: E402
from faultforge.harness import BENCHMARKS, bundled_harness  # noqa: E402
from faultforge.placement import harden, harden_naive, harden_single, verify_hardening  # noqa: E402
from faultforge.robustness import (  # noqa: E402
    attack_counts, compare_robustness, hotspot_counts, hotspots, is_proper_prefix,
    minimal_attacks, vuln,
)


def _record(name, fn, budget):
    start = time.perf_counter()
    try:
        detail = fn() or ""
        elapsed = time.perf_counter() - start
        if elapsed >= budget:
            raise AssertionError(f"took {elapsed:.1f}s, budget {budget}s")
    except AssertionError as exc:
        ACCEPTANCE.append(f"FAIL  {name}: {str(exc).splitlines()[0]}")
        raise
    ACCEPTANCE.append(f"PASS  {name} ({elapsed:.2f}s) {detail}".rstrip())


# 1 -------------------------------------------------------------------------

@pytest.mark.parametrize("name, row", [
    ("bac_v1", (0, 1, 1, 1, 2, 0, 0, 0, 0)),
    ("bac_v2", (0, 0, 1, 0, 1, 0, 1, 0, 2)),
])
def test_c1_attack_counts(name, row):
    def check():
        h = bundled_harness(name)
        assert (h.models, h.max_order, h.oracle) == (frozenset({TI}), 8, "result == BOOL_TRUE")
        got = vuln(h.explore(), "i0")
        assert got == row, f"{got} != {row}"
        return f"{list(got)}"
    _record(f"1 attack counts {name}", check, 10)


# 2 -------------------------------------------------------------------------

BAC_V2_HOTSPOTS = {
    "IP4": (0, 0, 1, 0, 1, 0, 1, 0, 1),
    "IP5": (0, 0, 0, 0, 1, 0, 2, 0, 7),
    "IP6": (0, 0, 0, 0, 0, 0, 0, 0, 0),
    "IP8": (0, 0, 0, 0, 1, 0, 2, 0, 7),
    "IP9": (0, 0, 1, 0, 1, 0, 1, 0, 1),
}


def test_c2_hotspots():
    def check():
        t = hotspots(bundled_harness("bac_v2").explore())
        assert t.totals() == {"IP4": 4, "IP5": 10, "IP6": 0, "IP8": 10, "IP9": 4}, t.totals()
        assert t.rows == BAC_V2_HOTSPOTS, t.rows
        return str(t.totals())
    _record("2 hotspots bac_v2", check, 10)


# 3 -------------------------------------------------------------------------

def test_c3_adequacy():
    expected = {("test_dup", TI): True, ("block_sig", TI): True, ("block_sig", EFT): True,
                ("load_dup", DLM): True, ("test_dup", EFT): False}

    def check():
        got = {}
        for (cm, model), want in expected.items():
            v = cat.check_adequacy(cat.protected_scheme(cm, model), model)
            got[cm, model] = v.adequate
            if not v.adequate:
                assert v.counterexample is not None and v.counterexample.fault_count == 1
        assert got == expected, got
        return "TestDup/EfT KO with counterexample, others adequate"
    _record("3 adequacy table", check, 5)


# 4 -------------------------------------------------------------------------

# Expected level of i instances, per countermeasure and model set.
LEVELS = {
    "test_dup": {"ti": lambda i: i, "dlm": lambda i: 1, "ti+dlm": lambda i: i},
    "load_dup": {"ti": lambda i: i, "dlm": lambda i: i, "ti+dlm": lambda i: i},
    "block_sig": {"ti": lambda i: i, "dlm": lambda i: i, "ti+dlm": lambda i: i},
}
_SETS = {"ti": [TI], "dlm": [DLM], "ti+dlm": [TI, DLM]}
_CELLS = [(cm, key, i) for cm in LEVELS for key in _SETS for i in (1, 2, 3)]
_T4 = {"spent": 0.0}


@pytest.mark.parametrize("cm, key, copies", _CELLS)
def test_c4_protection_levels(cm, key, copies):
    want = LEVELS[cm][key](copies)

    def check():
        start = time.perf_counter()
        got = cat.protection_level(cat.countermeasure_scheme(cm, copies), _SETS[key], bound=8)
        _T4["spent"] += time.perf_counter() - start
        assert _T4["spent"] < 30, "level table exceeded 30s in total"
        assert got.value == want, f"level {got}, expected {want}"
        return f"= {got}"
    _record(f"4 protection level {copies}x{cm} [{key}]", check, 30)


# 5 -------------------------------------------------------------------------

def test_c5_vp_rows():
    def check():
        h = bundled_harness("vp4")
        assert len(ir.enumerate_injection_points(h.program, [TI])) == 8
        naive, all_, single = [], [], []
        for n in (1, 2, 3, 4):
            a = h.explore(max_order=n)
            naive.append(harden_naive(h.program, n, models=[TI]).added_cm_count)
            all_.append(harden("all", h.program, a, n).added_cm_count)
            single.append(harden("single", h.program, a, n).added_cm_count)
        assert naive == [8, 16, 24, 32], naive
        assert all_ == [3, 8, 12, 16], all_
        assert single == [3, 6, 9, 12], single
        return f"naive {naive}, all {all_}, single {single}"
    _record("5 placement counts vp4", check, 60)


def test_c5_fu_toy():
    def check():
        h = bundled_harness("fu_toy")
        assert len(ir.enumerate_injection_points(h.program, [DLM])) == 2
        ti = h.with_overrides(models=[TI])
        assert vuln(ti.explore(max_order=1), None).aggregate()[1] == 0
        assert harden("all", ti.program, ti.explore(max_order=1), 1).added_cm_count == 0
        rows = {}
        for models in ([TI], [DLM], [TI, DLM]):
            hm = h.with_overrides(models=models)
            for n in (1, 2, 3, 4):
                a = hm.explore(max_order=n)
                counts = [harden(s, hm.program, a, n).added_cm_count for s in ("naive", "all", "single")]
                assert counts[2] <= counts[1] <= counts[0], (models, n, counts)
                rows[cat.model_key(models), n] = counts
            ips = len(ir.enumerate_injection_points(hm.program, models))
            if models == [TI] or models == [DLM]:
                assert [rows[cat.model_key(models), n][0] for n in (1, 2, 3, 4)] == [ips * n for n in (1, 2, 3, 4)]
        return "ordering holds, no 1-fault TI attack"
    _record("5 placement ordering fu_toy", check, 60)


# 6 -------------------------------------------------------------------------

_T6 = {"spent": 0.0}


@pytest.mark.parametrize("name", BENCHMARKS)
@pytest.mark.parametrize("n", [1, 2])
def test_c6_hardening_soundness(name, n):
    def check():
        start = time.perf_counter()
        h = bundled_harness(name)
        a = h.explore(max_order=n)
        r, _ = harden_single(h.program, a, n)
        rep = verify_hardening(h.program, r, h, n, a)
        _T6["spent"] += time.perf_counter() - start
        assert _T6["spent"] < 120, "hardening checks exceeded 2 minutes in total"
        assert rep.nominal_preserved
        assert rep.surviving_protected == [], rep.surviving_protected[:3]
        assert rep.comparison.holds, rep.comparison.describe()
        return f"{r.added_cm_count} instance(s), {len(r.protected_attacks)} protected attack(s)"
    _record(f"6 hardening soundness {name} n={n}", check, 120)


# 7 -------------------------------------------------------------------------

def _random_attacks(rng):
    occ = [FaultOccurrence(f"IP{i}", TI, k) for i in range(1, 5) for k in range(2)]
    return [tuple(rng.choice(occ) for _ in range(rng.randint(1, 5))) for _ in range(rng.randint(0, 12))]


def _random_row(rng, mu):
    return (0, *(rng.randint(0, 5) for _ in range(mu)))


def test_c7_metric_properties():
    def check():
        rng = random.Random(20240617)
        for _ in range(200):
            es = _random_attacks(rng)
            m = minimal_attacks(es)
            assert minimal_attacks(m) == m
            assert not any(is_proper_prefix(a, b) for a in m for b in m)
            t = hotspot_counts(es, 5)
            f = attack_counts(es, 5)
            for k in range(6):
                assert sum(t.column(k).values()) == k * f[k]
            mu = rng.randint(1, 6)
            a, b, c = (_random_row(rng, mu) for _ in range(3))
            assert compare_robustness(a, a).holds
            if compare_robustness(a, b).holds and compare_robustness(b, c).holds:
                assert compare_robustness(a, c).holds
            # Transitivity on a chain that is ordered by construction.
            d = tuple(x + rng.randint(0, 2) for x in a)
            e = tuple(x + rng.randint(0, 2) for x in d)
            d, e = (0, *d[1:]), (0, *e[1:])
            assert compare_robustness(a, d).holds and compare_robustness(d, e).holds
            assert compare_robustness(a, e).holds
            if compare_robustness(a, b).holds:
                for j in range(mu):
                    assert compare_robustness(a, b, up_to=j).holds
                    assert compare_robustness(a[:j + 1], b[:j + 1]).holds
        return "200 random sets"
    _record("7 metric properties", check, 30)


# 8 -------------------------------------------------------------------------

def test_c8_plan_counts():
    def check():
        for k in range(11):
            body = "".join(f"    if (x > {j}) {{ y = y + 1; }}\n" for j in range(k))
            p = ir.parse_program(f"fn f(x: int) -> int {{\n    let y = 0;\n{body}    return y;\n}}\n")
            for mu in range(k + 1):
                got = explore(p, [{"x": 3}], [TI], mu, "true").explored_paths
                want = sum(math.comb(k, j) for j in range(mu + 1))
                assert got == want, (k, mu, got, want)
        return "k = 0..10, every order"
    _record("8 plan counts on branch-free programs", check, 10)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
