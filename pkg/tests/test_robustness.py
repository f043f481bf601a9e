import pytest
from hypothesis import assume, given, settings, strategies as st

from faultforge.faults import TI, FaultOccurrence
from faultforge.robustness import (
    ROBUST, AttackFunction, attack_counts, compare_robustness, cumulative, hotspot_counts,
    hotspots, is_proper_prefix, minimal_attacks, report, representative, robustness_level, vuln,
    vuln_csv,
)

occurrences = st.builds(lambda ip, n: FaultOccurrence(f"IP{ip}", TI, n),
                        st.integers(1, 4), st.integers(0, 2))
attacks = st.lists(occurrences, min_size=1, max_size=5).map(tuple)
attack_sets = st.lists(attacks, max_size=12)
rows = st.lists(st.integers(0, 6), min_size=1, max_size=6).map(lambda r: (0, *r))


def test_minimal_examples(bac_v1_analysis):
    x = FaultOccurrence("IP1", TI, 0)
    y = FaultOccurrence("IP2", TI, 0)
    assert minimal_attacks([]) == []
    assert minimal_attacks([(x,), (x, y)]) == [(x,)]
    five = bac_v1_analysis.all_attacks()
    assert len(five) == 5
    assert minimal_attacks(five) == five


def test_hotspot_examples(bac_v1_analysis, bac_v2_analysis):
    assert hotspots(bac_v2_analysis).totals() == {"IP4": 4, "IP5": 10, "IP6": 0, "IP8": 10, "IP9": 4}
    assert hotspots(bac_v1_analysis).totals() == {"IP4": 4, "IP5": 10}
    assert hotspots(bac_v2_analysis).column(8) == {"IP4": 1, "IP5": 7, "IP6": 0, "IP8": 7, "IP9": 1}


def test_empty_hotspots():
    t = hotspot_counts([], 3, ["IP1", "IP2"])
    assert t.totals() == {"IP1": 0, "IP2": 0}


def test_vuln_rows(bac_v1_analysis, bac_v2, bac_v2_analysis):
    assert vuln(bac_v1_analysis, "i0") == (0, 1, 1, 1, 2, 0, 0, 0, 0)
    assert vuln(bac_v2_analysis, "i0") == (0, 0, 1, 0, 1, 0, 1, 0, 2)
    assert vuln(bac_v2.explore(max_order=0), "i0") == (0,)
    with pytest.raises(KeyError):
        vuln(bac_v2_analysis, "nope")


def test_levels():
    assert robustness_level((0, 0, 1, 0, 1, 0, 1, 0, 2)) == 1
    assert robustness_level((0, 0, 0)) == ROBUST
    assert robustness_level((0, 1, 1)) == 0


def test_comparison_examples():
    v2, v1 = (0, 0, 1, 0, 1, 0, 1, 0, 2), (0, 1, 1, 1, 2, 0, 0, 0, 0)
    verdict = compare_robustness(v2, v1)
    assert verdict.holds
    assert verdict.new_cumulative["i0"] == (0, 1, 1, 2, 2, 3, 3, 5)
    assert verdict.old_cumulative["i0"] == (1, 2, 3, 5, 5, 5, 5, 5)
    assert compare_robustness(v1, v1).holds
    bad = compare_robustness((0, 0, 3), (0, 1, 1))
    assert not bad.holds
    w = bad.first_failure
    assert (w.order, w.new_sum, w.old_sum) == (2, 3, 2)


def test_comparison_rejects_mismatch():
    with pytest.raises(ValueError):
        compare_robustness((0, 1), (0, 1, 1))
    with pytest.raises(ValueError):
        compare_robustness({"a": [0, 1]}, {"b": [0, 1]})


def test_report_layout(bac_v2_analysis):
    r = report(bac_v2_analysis, "abc")
    assert r["vuln"] == {"i0": [0, 0, 1, 0, 1, 0, 1, 0, 2]}
    assert r["hotspots"]["IP6"] == {"orders": [0] * 9, "total": 0}
    assert r["robust_up_to"] == 1 and r["complete"] is True
    assert set(r["minimal"][0][0]) == {"ip", "model", "occ", "payload"}
    assert vuln_csv(vuln(bac_v2_analysis)).splitlines()[1] == "i0,0,0,1,0,1,0,1,0,2"


# --- properties ------------------------------------------------------------


@given(attacks, attacks, attacks)
def test_prefix_is_a_strict_order(a, b, c):
    assert not is_proper_prefix(a, a)
    assert not (is_proper_prefix(a, b) and is_proper_prefix(b, a))
    if is_proper_prefix(a, b) and is_proper_prefix(b, c):
        assert is_proper_prefix(a, c)


@given(attack_sets)
def test_minimal_is_prefix_free_fixpoint(es):
    m = minimal_attacks(es)
    assert not any(is_proper_prefix(a, b) for a in m for b in m)
    assert minimal_attacks(m) == m
    for b in es:
        r = representative(b, es)
        assert r in m
        assert r == b or is_proper_prefix(r, b)


@given(attack_sets)
def test_hotspot_mass(es):
    mu = 5
    t = hotspot_counts(es, mu)
    f = attack_counts(es, mu)
    for k in range(mu + 1):
        assert sum(t.column(k).values()) == k * f[k]
    for ip, r in t.rows.items():
        assert t.total(ip) == sum(r)


@given(rows)
def test_level_matches_cumulative(f):
    lvl = robustness_level(f)
    mu = len(f) - 1
    if lvl == ROBUST:
        assert sum(f[1:]) == 0
    else:
        assert sum(f[1:lvl + 1]) == 0 and f[lvl + 1] > 0


@given(rows)
def test_comparison_reflexive(f):
    assert compare_robustness(f, f).holds


@given(rows, st.data())
def test_comparison_transitive(a, data):
    n = len(a)
    d1 = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    d2 = data.draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    b = tuple([0] + [x + y for x, y in zip(a[1:], d1[1:])])
    c = tuple([0] + [x + y for x, y in zip(b[1:], d2[1:])])
    assert compare_robustness(a, b).holds and compare_robustness(b, c).holds
    assert compare_robustness(a, c).holds


@settings(max_examples=200)
@given(st.integers(1, 5).flatmap(lambda n: st.tuples(*[
    st.lists(st.integers(0, 3), min_size=n, max_size=n).map(lambda r: (0, *r)) for _ in range(3)])))
def test_comparison_transitive_random_triples(triple):
    a, b, c = triple
    if compare_robustness(a, b).holds and compare_robustness(b, c).holds:
        assert compare_robustness(a, c).holds


@given(rows, rows)
def test_comparison_monotone_in_order(f, g):
    n = min(len(f), len(g))
    f, g = f[:n], g[:n]
    if compare_robustness(f, g).holds:
        for m in range(1, n):
            assert compare_robustness(f[:m], g[:m]).holds
            assert compare_robustness(f, g, up_to=m - 1).holds


def test_attack_function_json():
    f = AttackFunction(2, {"i0": (0, 1, 2)})
    assert AttackFunction.from_json(f.to_json()) == f
    assert cumulative((0, 1, 2)) == (1, 3)
