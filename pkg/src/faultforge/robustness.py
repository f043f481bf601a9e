"""Robustness metrics: minimal attacks, hotspots, attack functions and comparison."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from itertools import accumulate
from typing import Iterable, Mapping, Optional, Sequence

from .explorer import AttackAnalysis
from .faults import attack_sort_key
from .mini_ir import ip_sort_key

ROBUST = "robust-up-to-mu"


def is_proper_prefix(a: Sequence, b: Sequence) -> bool:
    return len(a) < len(b) and tuple(b[: len(a)]) == tuple(a)


def minimal_attacks(attacks: Iterable[Sequence]) -> list:
    """Attacks that have no proper prefix among ``attacks``, in canonical order."""
    pool = {tuple(a) for a in attacks}
    out = [a for a in pool if not any(a[:k] in pool for k in range(len(a)))]
    return _sorted_attacks(out)


def representative(attack: Sequence, attacks: Iterable[Sequence]) -> tuple:
    """Shortest prefix-or-equal of ``attack`` that belongs to ``attacks``."""
    pool = {tuple(a) for a in attacks}
    attack = tuple(attack)
    for k in range(len(attack) + 1):
        if attack[:k] in pool:
            return attack[:k]
    raise KeyError("attack has no representative in the set")


def _sorted_attacks(attacks) -> list:
    try:
        return sorted(attacks, key=attack_sort_key)
    except AttributeError:
        # Plain hashable symbols, as used in property tests.
        return sorted(attacks, key=lambda a: (len(a), tuple(map(repr, a))))


# ---------------------------------------------------------------------------
# Hotspots


@dataclass(frozen=True)
class HotspotTable:
    max_order: int
    rows: dict  # ip id -> tuple of counts for orders 0..max_order

    def total(self, ip: str) -> int:
        return sum(self.rows[ip])

    def totals(self) -> dict:
        return {ip: self.total(ip) for ip in self.rows}

    def column(self, k: int) -> dict:
        return {ip: r[k] for ip, r in self.rows.items()}

    def to_json(self) -> dict:
        return {ip: {"orders": list(r), "total": sum(r)} for ip, r in self.rows.items()}


def hotspot_counts(attacks: Iterable[Sequence], max_order: int, ips: Iterable[str] = ()) -> HotspotTable:
    rows = {ip: [0] * (max_order + 1) for ip in ips}
    for atk in attacks:
        k = len(atk)
        if k > max_order:
            raise ValueError(f"attack of order {k} exceeds max order {max_order}")
        for occ in atk:
            rows.setdefault(occ.ip, [0] * (max_order + 1))[k] += 1
    ordered = sorted(rows, key=ip_sort_key)
    return HotspotTable(max_order, {ip: tuple(rows[ip]) for ip in ordered})


def hotspots(analysis: AttackAnalysis) -> HotspotTable:
    """Per-IP occurrence counts in successful attacks, per order, over all inputs."""
    attacks = [atk for a in analysis.per_input for atk in a.attacks]
    return hotspot_counts(attacks, analysis.max_order, analysis.ips)


# ---------------------------------------------------------------------------
# Attack functions


@dataclass(frozen=True)
class AttackFunction:
    max_order: int
    rows: dict  # input id -> tuple f(0..max_order)

    @property
    def inputs(self) -> list:
        return list(self.rows)

    def aggregate(self) -> tuple:
        """Counts summed over all inputs (reporting only)."""
        return tuple(sum(col) for col in zip(*self.rows.values())) if self.rows else ()

    def to_json(self) -> dict:
        return {i: list(r) for i, r in self.rows.items()}

    @classmethod
    def from_json(cls, data: Mapping[str, Sequence[int]]) -> "AttackFunction":
        rows = {i: tuple(int(x) for x in r) for i, r in data.items()}
        lengths = {len(r) for r in rows.values()}
        if len(lengths) > 1:
            raise ValueError("rows of different lengths")
        mu = (lengths.pop() - 1) if lengths else 0
        return cls(mu, rows)


def attack_counts(attacks: Iterable[Sequence], max_order: int) -> tuple:
    row = [0] * (max_order + 1)
    for atk in attacks:
        row[len(atk)] += 1
    return tuple(row)


def vuln(analysis: AttackAnalysis, input_id: Optional[str] = None):
    """Attack counts per order for one input, or the whole attack function."""
    if input_id is None:
        return AttackFunction(analysis.max_order, {a.input_id: attack_counts(a.attacks, analysis.max_order)
                                                   for a in analysis.per_input})
    a = analysis.for_input(input_id)
    return attack_counts(a.attacks, analysis.max_order)


def robustness_level(row: Sequence[int]):
    """Largest order up to which no attack exists, or ``ROBUST`` if none at all."""
    for j in range(1, len(row)):
        if row[j] > 0:
            return j - 1
    return ROBUST


def level_value(row: Sequence[int]) -> int:
    """Numeric form of :func:`robustness_level` (``mu`` when robust throughout)."""
    lvl = robustness_level(row)
    return len(row) - 1 if lvl == ROBUST else lvl


# ---------------------------------------------------------------------------
# Comparison


@dataclass(frozen=True)
class Witness:
    input_id: str
    order: int
    new_sum: int
    old_sum: int


@dataclass(frozen=True)
class ComparisonVerdict:
    holds: bool
    first_failure: Optional[Witness] = None
    new_cumulative: dict = field(default_factory=dict)
    old_cumulative: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.holds

    def describe(self) -> str:
        if self.holds:
            return "holds"
        w = self.first_failure
        return (f"fails: input {w.input_id}, order {w.order}: "
                f"{w.new_sum} attacks up to {w.order} faults vs {w.old_sum}")


def cumulative(row: Sequence[int]) -> tuple:
    return tuple(accumulate(row[1:]))


def _as_function(f) -> AttackFunction:
    if isinstance(f, AttackFunction):
        return f
    if isinstance(f, AttackAnalysis):
        return vuln(f)
    if isinstance(f, Mapping):
        return AttackFunction.from_json(f)
    return AttackFunction(len(f) - 1, {"i0": tuple(f)})


def compare_robustness(new, old, up_to: Optional[int] = None) -> ComparisonVerdict:
    """Does ``new`` have no more attacks than ``old`` for every input and every order?

    Arguments are attack functions, analyses, ``{input: row}`` mappings or single rows.
    """
    fn, fo = _as_function(new), _as_function(old)
    if fn.max_order != fo.max_order:
        raise ValueError(f"max order mismatch: {fn.max_order} vs {fo.max_order}")
    if set(fn.rows) != set(fo.rows):
        raise ValueError("input sets differ")
    mu = fn.max_order if up_to is None else min(up_to, fn.max_order)
    cn = {i: cumulative(r)[:mu] for i, r in fn.rows.items()}
    co = {i: cumulative(fo.rows[i])[:mu] for i in fn.rows}
    for i in fn.rows:
        for n in range(1, mu + 1):
            if cn[i][n - 1] > co[i][n - 1]:
                return ComparisonVerdict(False, Witness(i, n, cn[i][n - 1], co[i][n - 1]), cn, co)
    return ComparisonVerdict(True, None, cn, co)


# ---------------------------------------------------------------------------
# Reports


def report(analysis: AttackAnalysis, harness_hash: Optional[str] = None) -> dict:
    f = vuln(analysis)
    minimal = minimal_attacks(analysis.all_attacks())
    levels = [level_value(r) for r in f.rows.values()]
    out = {
        "vuln": f.to_json(),
        "hotspots": hotspots(analysis).to_json(),
        "minimal": [[o.to_json() for o in atk] for atk in minimal],
        "robust_up_to": min(levels) if levels else analysis.max_order,
        "complete": analysis.complete,
        "max_order": analysis.max_order,
        "models": sorted(analysis.models),
        "oracle": analysis.oracle,
        "explored_paths": analysis.explored_paths,
    }
    if harness_hash is not None:
        out["harness_hash"] = harness_hash
    return out


def vuln_csv(f: AttackFunction) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["input", *range(f.max_order + 1)])
    for i, r in f.rows.items():
        w.writerow([i, *r])
    return buf.getvalue()


def hotspots_csv(t: HotspotTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ip", *range(t.max_order + 1), "total"])
    for ip, r in t.rows.items():
        w.writerow([ip, *r, sum(r)])
    return buf.getvalue()


def vuln_text(f: AttackFunction) -> str:
    head = ["faults"] + [str(k) for k in range(f.max_order + 1)]
    lines = [head] + [[i, *map(str, r)] for i, r in f.rows.items()]
    return _table(lines)


def hotspots_text(t: HotspotTable) -> str:
    head = ["IP"] + [str(k) for k in range(t.max_order + 1)] + ["total"]
    lines = [head] + [[ip, *map(str, r), str(sum(r))] for ip, r in t.rows.items()]
    return _table(lines)


def _table(lines: list) -> str:
    widths = [max(len(l[c]) for l in lines) for c in range(len(lines[0]))]
    return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(l, widths)) for l in lines) + "\n"
