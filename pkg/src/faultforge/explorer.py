"""Concrete interpreter with online fault decisions and exhaustive exploration.

Exploration is a depth-first enumeration of fault decisions by re-execution:
each run replays a prefix of decisions, takes the inactive choice at every
later choice point, and the deepest choice point with an untried option is
advanced for the next run.  Choice points exist only while fault budget is
left, so every run corresponds to exactly one fault plan.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence

from . import mini_ir as ir
from .faults import (
    DLM,
    EFT,
    INACTIVE,
    TI,
    FaultDecision,
    FaultOccurrence,
    FaultPlan,
    attack_sort_key,
    dlm_payload_domain,
    parse_models,
)

DEFAULT_STEP_LIMIT = 100_000

NOMINAL_EXIT = "nominal-exit"
DETECTED = "detected"
STEP_LIMIT = "step-limit"
ERROR = "error"


class UnreachableFault(RuntimeError):
    """A planned fault occurrence was never encountered by the trace."""


class _Return(Exception):
    def __init__(self, value):
        self.value = value


class _Detected(Exception):
    pass


class _StepLimit(Exception):
    pass


class _RuntimeFault(Exception):
    pass


@dataclass(frozen=True)
class Trace:
    init: dict
    plan: FaultPlan
    status: str
    result: Any = None
    final_store: dict = field(default_factory=dict)
    steps: int = 0
    error: Optional[str] = None

    @property
    def fault_count(self) -> int:
        return len(self.plan)

    def outcome(self) -> tuple:
        """Observable outcome used for nominal-behaviour comparisons."""
        params = {k: self.final_store.get(k) for k in self.init}
        return (self.status, _freeze(self.result), _freeze(params))


def _freeze(v):
    if isinstance(v, list):
        return tuple(v)
    if isinstance(v, dict):
        return tuple(sorted((k, _freeze(x)) for k, x in v.items()))
    return v


# ---------------------------------------------------------------------------
# Input handling


def check_inputs(p: ir.Program, inputs: Sequence[dict]) -> list:
    """Validate initial states against the entry signature."""
    types = ir.param_types(p)
    out = []
    for k, inp in enumerate(inputs):
        if set(inp) != set(types):
            raise ValueError(f"input {k}: expected parameters {sorted(types)}, got {sorted(inp)}")
        norm = {}
        for name, t in types.items():
            v = inp[name]
            if t == "int" and (isinstance(v, bool) or not isinstance(v, int)):
                raise ValueError(f"input {k}: {name} must be int")
            if t == "bool" and not isinstance(v, bool):
                raise ValueError(f"input {k}: {name} must be bool")
            if t == "byte[]":
                if not isinstance(v, (list, tuple)) or not all(
                        isinstance(x, int) and not isinstance(x, bool) for x in v):
                    raise ValueError(f"input {k}: {name} must be a list of ints")
                v = list(v)
            norm[name] = v
        if norm in out:
            raise ValueError(f"duplicate input {k}")
        out.append(norm)
    return out


# ---------------------------------------------------------------------------
# Compilation of MiniC to closures


class _Ctx:
    __slots__ = ("store", "steps", "limit", "counters", "occurrences", "decide")


def _int_op(op: str) -> Callable:
    return {
        "+": lambda a, b: a + b,
        "-": lambda a, b: a - b,
        "*": lambda a, b: a * b,
        "<": lambda a, b: a < b,
        "<=": lambda a, b: a <= b,
        ">": lambda a, b: a > b,
        ">=": lambda a, b: a >= b,
        "==": lambda a, b: a == b,
        "!=": lambda a, b: a != b,
    }[op]


class _Compiler:
    def __init__(self, p: ir.Program, enabled: dict):
        # site key -> ip id, for the sites that may be faulted
        self.enabled = enabled

    def expr(self, e: ir.Expr) -> Callable:
        if isinstance(e, ir.Const):
            v = e.value
            return lambda c: v
        if isinstance(e, ir.Name):
            name = e.id
            if name in ir.BUILTIN_CONSTANTS:
                v = ir.BUILTIN_CONSTANTS[name]
                return lambda c: v
            return lambda c: c.store[name]
        if isinstance(e, ir.Index):
            fb, fi = self.expr(e.base), self.expr(e.index)

            def index(c):
                b, i = fb(c), fi(c)
                if not 0 <= i < len(b):
                    raise _RuntimeFault(f"index {i} out of bounds")
                return b[i]
            return index
        if isinstance(e, ir.Load):
            fa = self.expr(e.arg)
            ip = self.enabled.get((ir.MARKED_LOAD, e.line, e.col))
            if ip is None:
                return fa

            def load(c):
                v = fa(c)
                n = c.counters.get(ip, 0)
                c.counters[ip] = n + 1
                d = c.decide(ip, DLM, n, v)
                if d.active:
                    c.occurrences.append(FaultOccurrence(ip, DLM, n, d.payload))
                    return d.payload
                return v
            return load
        if isinstance(e, ir.Unary):
            fo = self.expr(e.operand)
            if e.op == "!":
                return lambda c: not fo(c)
            return lambda c: -fo(c)
        if isinstance(e, ir.Binary):
            fl, fr = self.expr(e.left), self.expr(e.right)
            if e.op == "&&":
                return lambda c: fl(c) and fr(c)
            if e.op == "||":
                return lambda c: fl(c) or fr(c)
            op = _int_op(e.op)
            return lambda c: op(fl(c), fr(c))
        raise TypeError(e)

    def cond(self, s) -> Callable:
        fc = self.expr(s.cond)
        ip = self.enabled.get((ir.CONDITIONAL_TEST, s.line, s.col))
        if ip is None:
            return fc

        def test(c):
            v = fc(c)
            n = c.counters.get(ip, 0)
            c.counters[ip] = n + 1
            d = c.decide(ip, TI, n, v)
            if d.active:
                c.occurrences.append(FaultOccurrence(ip, TI, n))
                return not v
            return v
        return test

    def block(self, stmts: Sequence[ir.Stmt]) -> Callable:
        fns = [self.stmt(s) for s in stmts]
        if len(fns) == 1:
            return fns[0]

        def run(c):
            for f in fns:
                f(c)
        return run

    def stmt(self, s: ir.Stmt) -> Callable:
        if isinstance(s, ir.Let):
            name, fv = s.name, self.expr(s.value)

            def let(c):
                c.steps += 1
                if c.steps > c.limit:
                    raise _StepLimit
                c.store[name] = fv(c)
            return let
        if isinstance(s, ir.Assign):
            fv = self.expr(s.value)
            if isinstance(s.target, ir.Name):
                name = s.target.id

                def assign(c):
                    c.steps += 1
                    if c.steps > c.limit:
                        raise _StepLimit
                    c.store[name] = fv(c)
                return assign
            fb, fi = self.expr(s.target.base), self.expr(s.target.index)

            def assign_index(c):
                c.steps += 1
                if c.steps > c.limit:
                    raise _StepLimit
                b, i = fb(c), fi(c)
                if not 0 <= i < len(b):
                    raise _RuntimeFault(f"index {i} out of bounds")
                b[i] = fv(c)
            return assign_index
        if isinstance(s, ir.Return):
            fv = self.expr(s.value)

            def ret(c):
                c.steps += 1
                raise _Return(fv(c))
            return ret
        if isinstance(s, ir.Detect):
            def detect(c):
                c.steps += 1
                raise _Detected
            return detect
        if isinstance(s, ir.While):
            test, body = self.cond(s), self.block(s.body)

            def loop(c):
                while True:
                    c.steps += 1
                    if c.steps > c.limit:
                        raise _StepLimit
                    if not test(c):
                        return
                    body(c)
            return loop
        if isinstance(s, ir.If):
            return self.if_stmt(s)
        raise TypeError(s)

    def if_stmt(self, s: ir.If) -> Callable:
        test = self.cond(s)
        then = self.block(s.body) if s.body else (lambda c: None)
        orelse = self.block(s.orelse) if s.orelse else None
        eft_ip = self.enabled.get((ir.THEN_ELSE_JOIN, s.line, s.col)) if s.orelse else None
        if eft_ip is None:
            def branch(c):
                c.steps += 1
                if c.steps > c.limit:
                    raise _StepLimit
                if test(c):
                    then(c)
                elif orelse is not None:
                    orelse(c)
            return branch
        n_guards = 0
        while n_guards < len(s.orelse) and isinstance(s.orelse[n_guards], ir.If) \
                and s.orelse[n_guards].guard:
            n_guards += 1
        tail = self.block(s.orelse[n_guards:]) if s.orelse[n_guards:] else (lambda c: None)

        def branch_eft(c):
            c.steps += 1
            if c.steps > c.limit:
                raise _StepLimit
            if test(c):
                then(c)
                n = c.counters.get(eft_ip, 0)
                c.counters[eft_ip] = n + 1
                if c.decide(eft_ip, EFT, n, "then").active:
                    c.occurrences.append(FaultOccurrence(eft_ip, EFT, n))
                    # The jump over the else block is skipped; the branch-edge
                    # guards of the else side are not on the fall-through path.
                    tail(c)
            else:
                orelse(c)
        return branch_eft


class Machine:
    """A compiled program ready to run traces."""

    def __init__(self, p: ir.Program, models: Iterable[str] = (TI, DLM, EFT),
                 sites: Optional[Iterable[str]] = None):
        self.program = p
        self.models = parse_models(models)
        allowed = None if sites is None else set(sites)
        self.ips = [ip for ip in ir.all_injection_points(p)
                    if ip.model in self.models and (allowed is None or ip.id in allowed)]
        enabled = {ip.site: ip.id for ip in self.ips}
        fn = p.entry_function
        self.params = [prm.name for prm in fn.params]
        self._body = _Compiler(p, enabled).block(fn.body) if fn.body else (lambda c: None)

    def run(self, init: dict, decide: Callable, step_limit: int = DEFAULT_STEP_LIMIT) -> Trace:
        c = _Ctx()
        c.store = {k: (list(v) if isinstance(v, list) else v) for k, v in init.items()}
        c.steps = 0
        c.limit = step_limit
        c.counters = {}
        c.occurrences = []
        c.decide = decide
        status, result, error = ERROR, None, None
        try:
            self._body(c)
            error = "function ended without return"
        except _Return as r:
            status, result = NOMINAL_EXIT, r.value
        except _Detected:
            status = DETECTED
        except _StepLimit:
            status = STEP_LIMIT
        except _RuntimeFault as exc:
            error = str(exc)
        return Trace(dict(init), FaultPlan(tuple(c.occurrences)), status, result,
                     dict(c.store), c.steps, error)


def _never(ip, model, n, value) -> FaultDecision:
    return INACTIVE


def run_trace(p: ir.Program, init: dict, plan: FaultPlan = FaultPlan(),
              step_limit: int = DEFAULT_STEP_LIMIT) -> Trace:
    """Execute ``p`` on ``init`` injecting exactly the faults of ``plan``."""
    if step_limit <= 0:
        raise ValueError("step_limit must be positive")
    wanted = {(o.ip, o.dyn_index): o for o in plan}
    if len(wanted) != len(plan):
        raise ValueError("plan names the same occurrence twice")
    models = {o.model for o in plan} or {TI}
    machine = Machine(p, models)
    used = set()

    def decide(ip, model, n, value):
        o = wanted.get((ip, n))
        if o is None or o.model != model:
            return INACTIVE
        used.add((ip, n))
        return FaultDecision(True, o.payload if model == DLM else None)

    trace = machine.run(check_inputs(p, [init])[0], decide, step_limit)
    missing = [o for k, o in wanted.items() if k not in used]
    if missing:
        raise UnreachableFault("never encountered: " + ", ".join(o.label() for o in missing))
    return trace


# ---------------------------------------------------------------------------
# Oracles


@dataclass(frozen=True)
class Oracle:
    """Success condition over ``result`` and the final parameter values."""

    text: str

    def compile(self, p: ir.Program) -> Callable:
        expr = ir.parse_expression(self.text)
        types = dict(ir.param_types(p))
        types["result"] = p.entry_function.ret
        if ir.expr_type(expr, types.get) != "bool":
            raise ir.MiniCSemanticError(f"oracle {self.text!r} is not a bool expression")
        fn = _Compiler(p, {}).expr(expr)

        def holds(trace: Trace) -> bool:
            c = _Ctx()
            c.store = dict(trace.final_store)
            c.store["result"] = trace.result
            try:
                return bool(fn(c))
            except _RuntimeFault:
                return False
        return holds


# ---------------------------------------------------------------------------
# Exhaustive exploration


class _Chooser:
    __slots__ = ("prefix", "budget", "extras", "taken", "options")

    def __init__(self, prefix: list, budget: int, extras: tuple):
        self.prefix = prefix
        self.budget = budget
        self.extras = extras
        self.taken: list = []
        self.options: list = []

    def __call__(self, ip, model, n, value) -> FaultDecision:
        if self.budget <= 0:
            return INACTIVE
        if model == DLM:
            domain = dlm_payload_domain(value, self.extras)
            count = 1 + len(domain)
        else:
            domain = None
            count = 2
        pos = len(self.taken)
        idx = self.prefix[pos] if pos < len(self.prefix) else 0
        self.taken.append(idx)
        self.options.append(count)
        if idx == 0:
            return INACTIVE
        self.budget -= 1
        return FaultDecision(True, domain[idx - 1] if domain is not None else None)


@dataclass(frozen=True)
class InputAnalysis:
    input_id: str
    init: dict
    attacks: tuple
    count_nominal: int
    count_detected: int
    count_failed: int
    count_step_limit: int
    count_error: int
    nominal_trace: Trace
    explored: int

    @property
    def count_successful(self) -> int:
        return len(self.attacks)


@dataclass(frozen=True)
class AttackAnalysis:
    per_input: tuple
    max_order: int
    models: frozenset
    oracle: str
    ips: tuple
    dlm_payloads: tuple = ()
    step_limit: int = DEFAULT_STEP_LIMIT

    @property
    def explored_paths(self) -> int:
        return sum(a.explored for a in self.per_input)

    @property
    def complete(self) -> bool:
        return all(a.count_step_limit == 0 for a in self.per_input)

    @property
    def input_ids(self) -> list:
        return [a.input_id for a in self.per_input]

    def for_input(self, input_id: str) -> InputAnalysis:
        for a in self.per_input:
            if a.input_id == input_id:
                return a
        raise KeyError(f"unknown input {input_id!r}")

    def all_attacks(self) -> list:
        out = []
        for a in self.per_input:
            for atk in a.attacks:
                if atk not in out:
                    out.append(atk)
        return sorted(out, key=attack_sort_key)

    def count(self, name: str) -> int:
        return sum(getattr(a, f"count_{name}") for a in self.per_input)


def _explore_one(args) -> InputAnalysis:
    p, input_id, init, models, max_order, oracle_text, step_limit, extras, sites = args
    machine = Machine(p, models, sites)
    holds = Oracle(oracle_text).compile(p)
    attacks = []
    counts = {"nominal": 0, "detected": 0, "failed": 0, "step_limit": 0, "error": 0}
    nominal = None
    explored = 0
    prefix: list = []
    while True:
        chooser = _Chooser(prefix, max_order, extras)
        t = machine.run(init, chooser, step_limit)
        explored += 1
        if t.status == STEP_LIMIT:
            counts["step_limit"] += 1
        elif t.fault_count == 0:
            counts["nominal"] += 1
            nominal = t
        elif t.status == ERROR:
            counts["error"] += 1
        elif t.status == DETECTED:
            counts["detected"] += 1
        elif holds(t):
            attacks.append(t.plan.schedule)
        else:
            counts["failed"] += 1
        taken, options = chooser.taken, chooser.options
        j = len(taken) - 1
        while j >= 0 and taken[j] == options[j] - 1:
            j -= 1
        if j < 0:
            break
        prefix = taken[:j] + [taken[j] + 1]
    if nominal is None:
        nominal = machine.run(init, _never, step_limit)
    return InputAnalysis(
        input_id, init, tuple(sorted(attacks, key=attack_sort_key)),
        counts["nominal"], counts["detected"], counts["failed"], counts["step_limit"],
        counts["error"], nominal, explored,
    )


def explore(p: ir.Program, inputs: Sequence[dict], models: Iterable[str], max_order: int,
            oracle: str, step_limit: int = DEFAULT_STEP_LIMIT, dlm_payloads: Sequence[int] = (),
            sites: Optional[Iterable[str]] = None, input_ids: Optional[Sequence[str]] = None,
            jobs: int = 1) -> AttackAnalysis:
    """Enumerate every fault plan of at most ``max_order`` faults.

    ``sites`` restricts faults to the given injection point ids.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    models = parse_models(models)
    inputs = check_inputs(p, inputs)
    if not inputs:
        raise ValueError("input set is empty")
    Oracle(oracle).compile(p)
    ids = list(input_ids) if input_ids is not None else [f"i{k}" for k in range(len(inputs))]
    sites = None if sites is None else frozenset(sites)
    jobs_args = [(p, ids[k], inp, models, max_order, oracle, step_limit, tuple(dlm_payloads), sites)
                 for k, inp in enumerate(inputs)]
    if jobs > 1 and len(jobs_args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_input = list(pool.map(_explore_one, jobs_args))
    else:
        per_input = [_explore_one(a) for a in jobs_args]
    ips = tuple(ip.id for ip in Machine(p, models, sites).ips)
    return AttackAnalysis(tuple(per_input), max_order, models, oracle, ips,
                          tuple(dlm_payloads), step_limit)


def default_jobs() -> int:
    return os.cpu_count() or 1
