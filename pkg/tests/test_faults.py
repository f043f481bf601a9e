import pytest
from hypothesis import given, strategies as st

from faultforge import catalog as cat
from faultforge.explorer import Oracle, UnreachableFault, explore, run_trace
from faultforge.faults import (
    DLM, EFT, EXIT_IF, FALL_INTO_ELSE, INACTIVE, TI, FaultDecision, FaultModel, FaultOccurrence,
    FaultPlan, apply_dlm, apply_ti, dlm_payload_domain, eft_successor, parse_models,
)

ACTIVE = FaultDecision(True)


@pytest.mark.parametrize("cond, d, expected", [
    (True, INACTIVE, True), (True, ACTIVE, False), (False, ACTIVE, True), (False, INACTIVE, False),
])
def test_apply_ti(cond, d, expected):
    assert apply_ti(cond, d) is expected


def test_apply_dlm():
    assert apply_dlm(7, INACTIVE) == 7
    assert apply_dlm(7, FaultDecision(True, 0)) == 0
    # Injecting the right value is still a fault.
    assert apply_dlm(7, FaultDecision(True, 7)) == 7
    with pytest.raises(ValueError):
        apply_dlm(7, FaultDecision(True))


def test_eft_successor():
    assert eft_successor("then", INACTIVE) == EXIT_IF
    assert eft_successor("then", ACTIVE) == FALL_INTO_ELSE
    assert eft_successor("else", ACTIVE) == EXIT_IF


@given(st.booleans(), st.integers(-1000, 1000))
def test_inactive_is_identity(b, v):
    assert apply_ti(b, INACTIVE) == b
    assert apply_dlm(v, INACTIVE) == v
    assert eft_successor("then", INACTIVE) == EXIT_IF


@given(st.booleans())
def test_ti_is_an_involution(b):
    assert apply_ti(apply_ti(b, ACTIVE), ACTIVE) == b


@given(st.integers(-1000, 1000), st.lists(st.integers(-5, 5), max_size=4))
def test_payload_domain_finite_and_nonempty(v, extra):
    dom = dlm_payload_domain(v, extra)
    assert dom and len(dom) == len(set(dom))
    assert dom[:1] == [0]
    assert set(extra) <= set(dom)


def test_bool_payload_domain():
    assert dlm_payload_domain(True) == [False, True]


def test_models():
    assert parse_models("ti,DLM") == {TI, DLM}
    with pytest.raises(ValueError):
        parse_models("skip")
    with pytest.raises(ValueError):
        FaultModel(TI, payloads=(1,))


def test_occurrence_json_round_trip():
    o = FaultOccurrence("IP8b", DLM, 2, 7)
    assert FaultOccurrence.from_json(o.to_json()) == o
    assert o.to_json() == {"ip": "IP8b", "model": "dlm", "occ": 2, "payload": 7}
    assert FaultOccurrence("IP8", DLM, 0, 1) != FaultOccurrence("IP8", DLM, 0, 2)


@pytest.mark.parametrize("model", [TI, DLM, EFT])
def test_mutation_scheme_contracts(model):
    """Fault-free runs satisfy the nominal post, faulted runs the faulted post."""
    s = cat.mutation_scheme(model)
    p = s.program
    nb = Oracle(s.nominal_post).compile(p)
    faulted = Oracle(s.faulted_post).compile(p)
    for init in s.inputs:
        t = run_trace(p, init)
        assert nb(t), init
        payloads = dlm_payload_domain(init.get("value", 0), cat.INT_DOMAIN) if model == DLM else [None]
        for pay in payloads:
            try:
                ft = run_trace(p, init, FaultPlan.of(FaultOccurrence(s.hook, model, 0, pay)))
            except UnreachableFault:
                # The else path never reaches the end of a then block.
                assert model == EFT and not init["c"]
                assert faulted(t)
                continue
            assert ft.fault_count == 1
            assert faulted(ft), (init, pay)


def test_eft_contract_values():
    s = cat.mutation_scheme(EFT)
    p = s.program
    hit = FaultPlan.of(FaultOccurrence(s.hook, EFT, 0))
    assert run_trace(p, {"c": True}).result == 0x10
    assert run_trace(p, {"c": True}, hit).result == 0x11
    with pytest.raises(UnreachableFault):
        run_trace(p, {"c": False}, hit)
    # No choice point exists on the else path.
    assert explore(p, [{"c": False}], [EFT], 1, "true").explored_paths == 1
    assert run_trace(p, {"c": False}).result == 0x01
