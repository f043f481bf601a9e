"""Countermeasure placement strategies and verification of hardened programs."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from . import mini_ir as ir
from .catalog import Catalog, LookupResult, default_catalog, lookup
from .explorer import AttackAnalysis, Oracle, UnreachableFault, run_trace, DETECTED
from .faults import FaultPlan, TI, attack_sort_key, parse_models
from .harness import Harness
from .robustness import ComparisonVerdict, compare_robustness, is_proper_prefix, vuln

NAIVE, ALL, SINGLE = "naive", "all", "single"
STRATEGIES = (NAIVE, ALL, SINGLE)


class InstrumentationError(RuntimeError):
    """A rewrite changed the fault-free behaviour of the program."""


@dataclass(frozen=True)
class Protection:
    ip: str
    model: str
    cm: str
    copies: int
    level: float
    sufficient: bool = True

    def to_json(self) -> dict:
        return {"ip": self.ip, "model": self.model, "cm": self.cm, "copies": self.copies,
                "level": self.level if self.level != float("inf") else "inf",
                "sufficient": self.sufficient}


@dataclass
class PlacementResult:
    strategy: str
    n: int
    ip_protected: list
    protected_attacks: list
    hardened: ir.Program
    skipped: list = field(default_factory=list)  # ip ids without an adequate entry
    unprotected_attacks: list = field(default_factory=list)

    @property
    def added_cm_count(self) -> int:
        return sum(p.copies for p in self.ip_protected)

    @property
    def partial(self) -> bool:
        return bool(self.skipped)

    @property
    def residual_level(self) -> int:
        """Least protection level actually relied upon (``n`` when nothing degraded)."""
        if self.unprotected_attacks and not any(not p.sufficient for p in self.ip_protected):
            return 0
        levels = [p.level for p in self.ip_protected]
        return int(min([self.n, *levels])) if levels else (0 if self.unprotected_attacks else self.n)


@dataclass
class HardeningReport:
    strategy: str
    n: int
    residual_level: int
    unprotected_attacks: list
    nominal_preserved: bool = False
    surviving_protected: list = field(default_factory=list)
    comparison: Optional[ComparisonVerdict] = None
    complete: bool = False
    new_counts: dict = field(default_factory=dict)
    old_counts: dict = field(default_factory=dict)

    @property
    def verified(self) -> bool:
        return (self.nominal_preserved and not self.surviving_protected
                and self.comparison is not None and self.comparison.holds)


def _apply(p: ir.Program, protections: Sequence[Protection]) -> ir.Program:
    out = p
    for prot in sorted(protections, key=lambda x: (ir.ip_sort_key(x.ip), x.model)):
        target = ir.find_ip(out, prot.ip)
        out = ir.apply_scheme(out, target, prot.cm, prot.copies)
    return out


def _protect_ips(p: ir.Program, ips: Iterable[ir.InjectionPoint], n: int, c: Catalog,
                 models: frozenset) -> tuple:
    chosen, skipped = [], []
    if n <= 0:
        return chosen, skipped
    for ip in ips:
        r = lookup(c, ip, ip.model, n, models)
        if r is None:
            skipped.append(ip.id)
            continue
        chosen.append(Protection(ip.id, ip.model, r.entry.cm, r.copies, r.level, r.sufficient))
    return chosen, skipped


def harden_naive(p: ir.Program, n: int, c: Optional[Catalog] = None,
                 models: Iterable[str] = (TI,)) -> PlacementResult:
    """Protect every injection point at level ``n``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    c = c if c is not None else default_catalog()
    models = parse_models(models)
    ips = ir.enumerate_injection_points(p, models)
    chosen, skipped = _protect_ips(p, ips, n, c, models)
    return PlacementResult(NAIVE, n, chosen, [], _apply(p, chosen), skipped)


def attack_ips(attacks: Iterable[Sequence], n: Optional[int] = None) -> list:
    ids = {o.ip for atk in attacks if n is None or len(atk) <= n for o in atk}
    return sorted(ids, key=ir.ip_sort_key)


def harden_all(p: ir.Program, a, n: int, c: Optional[Catalog] = None) -> PlacementResult:
    """Protect at level ``n`` every IP that occurs in an attack of order <= ``n``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    c = c if c is not None else default_catalog()
    attacks = a.all_attacks() if isinstance(a, AttackAnalysis) else list(a)
    models = a.models if isinstance(a, AttackAnalysis) else parse_models(
        {o.model for atk in attacks for o in atk} or {TI})
    if isinstance(a, AttackAnalysis) and a.max_order < n:
        raise ValueError(f"analysis explored up to {a.max_order} faults, below n={n}")
    ips = [ir.find_ip(p, i) for i in attack_ips(attacks, n)]
    chosen, skipped = _protect_ips(p, ips, n, c, models)
    protected = [atk for atk in attacks if len(atk) <= n and any(o.ip in {x.ip for x in chosen if x.sufficient} for o in atk)]
    return PlacementResult(ALL, n, chosen, _sorted(protected), _apply(p, chosen), skipped)


def _sorted(attacks) -> list:
    return sorted({tuple(x) for x in attacks}, key=attack_sort_key)


def harden_single(p: ir.Program, A, n: int, c: Optional[Catalog] = None,
                  degraded: bool = False) -> tuple:
    """Heuristic placement: one protected IP per attack, preferring shared IPs.

    Attacks are visited by increasing order.  For each attack not yet
    protected, candidate IPs are those with an adequate catalog entry; the
    cheapest entries reaching level ``n`` are preferred, otherwise the
    strongest available.  Among candidates the IP occurring most often in
    still-unprotected attacks wins.  With ``degraded`` the best insufficient
    countermeasure is still inserted and the residual level drops to it.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    c = c if c is not None else default_catalog()
    attacks = A.all_attacks() if isinstance(A, AttackAnalysis) else list(A)
    models = A.models if isinstance(A, AttackAnalysis) else parse_models(
        {o.model for atk in attacks for o in atk} or {TI})
    attacks = _sorted(atk for atk in attacks if 1 <= len(atk) <= n)
    protected: set = set()
    recorded: dict = {}
    unprotected: list = []
    cache: dict = {}

    def candidate(ip_id: str, model: str) -> Optional[LookupResult]:
        if (ip_id, model) not in cache:
            cache[ip_id, model] = lookup(c, ir.find_ip(p, ip_id), model, n, models)
        return cache[ip_id, model]

    for k in range(1, n + 1):
        for atk in (x for x in attacks if len(x) == k):
            if atk in protected:
                continue
            cands = {}
            for o in atk:
                r = candidate(o.ip, o.model)
                if r is not None:
                    cands[o.ip, o.model] = r
            if not cands:
                unprotected.append(atk)
                continue
            sufficient = {key: r for key, r in cands.items() if r.sufficient}
            if sufficient:
                best = min(r.level for r in sufficient.values())
                pool = {key: r for key, r in sufficient.items() if r.level == best}
            else:
                best = max(r.level for r in cands.values())
                pool = {key: r for key, r in cands.items() if r.level == best}
            open_attacks = [x for x in attacks if x not in protected]

            def weight(key):
                return sum(1 for x in open_attacks for o in x if o.ip == key[0])

            ip_id, model = min(pool, key=lambda key: (-weight(key), ir.ip_sort_key(key[0]), key[1]))
            r = pool[ip_id, model]
            pl = r.level
            if pl + 1 > n:
                recorded.setdefault(ip_id, Protection(ip_id, model, r.entry.cm, r.copies, pl, True))
                for x in attacks:
                    if any(o.ip == ip_id for o in x):
                        protected.add(x)
            else:
                if degraded:
                    recorded.setdefault(ip_id, Protection(ip_id, model, r.entry.cm, r.copies, pl, False))
                unprotected.append(atk)

    chosen = list(recorded.values())
    result = PlacementResult(SINGLE, n, chosen, _sorted(protected), _apply(p, chosen), [],
                             _sorted(unprotected))
    rep = HardeningReport(SINGLE, n, result.residual_level, result.unprotected_attacks)
    return result, rep


def harden(strategy: str, p: ir.Program, analysis: AttackAnalysis, n: int,
           c: Optional[Catalog] = None, degraded: bool = False) -> PlacementResult:
    if strategy == NAIVE:
        return harden_naive(p, n, c, analysis.models)
    if strategy == ALL:
        return harden_all(p, analysis, n, c)
    if strategy == SINGLE:
        return harden_single(p, analysis, n, c, degraded)[0]
    raise ValueError(f"unknown strategy {strategy!r}")


# ---------------------------------------------------------------------------
# Verification


def check_nominal(p: ir.Program, hardened: ir.Program, harness: Harness) -> None:
    """Raise InstrumentationError unless fault-free runs agree on every input."""
    for iid, init in zip(harness.ids, harness.inputs):
        a = run_trace(p, init, FaultPlan(), harness.step_limit)
        b = run_trace(hardened, init, FaultPlan(), harness.step_limit)
        if a.outcome() != b.outcome():
            raise InstrumentationError(
                f"input {iid}: fault-free behaviour changed from {a.outcome()} to {b.outcome()}")


def _project(attack: Sequence, original_ips: set) -> tuple:
    return tuple(o for o in attack if o.ip in original_ips)


def verify_hardening(p: ir.Program, r: PlacementResult, harness: Harness, n: Optional[int] = None,
                     original: Optional[AttackAnalysis] = None, jobs: int = 1) -> HardeningReport:
    """Re-explore the hardened program and check the placement's guarantees."""
    n = r.n if n is None else n
    check_nominal(p, r.hardened, harness)
    holds = Oracle(harness.oracle).compile(r.hardened)
    surviving = []
    for atk in r.protected_attacks:
        for init in harness.inputs:
            try:
                t = run_trace(r.hardened, init, FaultPlan(tuple(atk)), harness.step_limit)
            except UnreachableFault:
                continue
            if t.status != DETECTED and t.status == "nominal-exit" and holds(t):
                surviving.append(tuple(atk))
                break
    old = original if original is not None and original.max_order == n else harness.explore(p, n, jobs)
    new = harness.explore(r.hardened, n, jobs)
    orig_ips = set(old.ips) | {ip.id for ip in ir.all_injection_points(p)}
    prot = [tuple(x) for x in r.protected_attacks]
    for atk in new.all_attacks():
        proj = _project(atk, orig_ips)
        if any(proj == x or is_proper_prefix(x, proj) for x in prot):
            if atk not in surviving:
                surviving.append(atk)
    verdict = compare_robustness(vuln(new), vuln(old), n)
    return HardeningReport(r.strategy, n, r.residual_level, list(r.unprotected_attacks), True,
                           surviving, verdict, new.complete and old.complete,
                           vuln(new).to_json(), vuln(old).to_json())


def harden_iteratively(p: ir.Program, harness: Harness, n: int, c: Optional[Catalog] = None,
                       max_iterations: int = 3, jobs: int = 1) -> list:
    """Repeat single-strategy hardening while attacks below ``n`` faults remain.

    Countermeasure code inserted in one round is itself a target in the next.
    Stops when no attack remains, no progress is possible, or after
    ``max_iterations`` rounds.  Returns the placement of each round.
    """
    rounds = []
    current = p
    for _ in range(max_iterations):
        analysis = harness.explore(current, n, jobs)
        if not analysis.all_attacks():
            break
        result, _ = harden_single(current, analysis, n, c)
        if not result.ip_protected:
            break
        rounds.append(result)
        current = result.hardened
    return rounds
