"""Countermeasure catalog: scheme programs, adequacy and protection levels.

Adequacy and protection levels are established by exhaustive exploration of
small scheme programs over a finite input domain.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from . import mini_ir as ir
from .explorer import (
    DEFAULT_STEP_LIMIT,
    Trace,
    explore,
    run_trace,
)
from .faults import DLM, EFT, TI, FaultPlan, parse_models

INT_DOMAIN = (-1, 0, 1, 7)
BOOL_DOMAIN = (False, True)

MUTATION = "mutation"
COUNTERMEASURE = "countermeasure"
PROTECTED = "protected"

CM_NAMES = ("test_dup", "load_dup", "block_sig")
MODEL_SETS = ((TI,), (DLM,), (TI, DLM))
# Every model combination a placement may ask about.
LEVEL_SETS = tuple(s for k in (1, 2, 3) for s in itertools.combinations((TI, DLM, EFT), k))


def model_key(models: Iterable[str]) -> str:
    """Canonical name of a model set, e.g. ``"ti+dlm"``."""
    models = parse_models(models)
    return "+".join(m for m in (TI, DLM, EFT) if m in models)


@dataclass(frozen=True)
class Scheme:
    name: str
    kind: str
    source: str
    # Predicates are MiniC expressions over the parameters and `result`.
    nominal_post: Optional[str] = None
    faulted_post: Optional[str] = None
    cm_post: Optional[str] = None
    inputs: tuple = ()
    model: Optional[str] = None
    hook: Optional[str] = None
    cm: Optional[str] = None

    @property
    def program(self) -> ir.Program:
        return ir.parse_program(self.source)


def _domain(program: ir.Program) -> tuple:
    axes = []
    for prm in program.entry_function.params:
        axes.append(BOOL_DOMAIN if prm.type == "bool" else INT_DOMAIN)
    names = [prm.name for prm in program.entry_function.params]
    return tuple(dict(zip(names, combo)) for combo in itertools.product(*axes))


def _read_scheme(name: str) -> str:
    return resources.files("faultforge.schemes").joinpath(f"{name}.mc").read_text()


_MUTATIONS = {
    TI: ("mutation_ti",
         "(c && result == br_then) || (!c && result == br_else)",
         "(c && result == br_else) || (!c && result == br_then)"),
    DLM: ("mutation_dl", "result == value", "true"),
    EFT: ("mutation_then_else",
          "(c && result == 16) || (!c && result == 1)",
          "(c && result == 17) || (!c && result == 1)"),
}


def mutation_scheme(model: str) -> Scheme:
    name, nb, faulted = _MUTATIONS[model]
    src = _read_scheme(name)
    prog = ir.parse_program(src)
    kind = {TI: ir.CONDITIONAL_TEST, DLM: ir.MARKED_LOAD, EFT: ir.THEN_ELSE_JOIN}[model]
    hook = next(ip.id for ip in ir.all_injection_points(prog) if ip.kind == kind)
    return Scheme(name, MUTATION, src, nb, faulted, None, _domain(prog), model, hook)


def countermeasure_source(cm: str, copies: int = 1) -> str:
    """MiniC source of ``copies`` instances of a countermeasure in isolation."""
    if cm == "test_dup":
        # The tested value is read once and shared by every duplicated test.
        checks = "\n".join("    if (!v) { detect(); }" for _ in range(copies))
        return f"fn test_dup(c: bool) -> int {{\n    let v = load(c);\n{checks}\n    return 0;\n}}\n"
    if cm == "load_dup":
        body = "\n".join(f"    let cm{k} = load(value);\n    if (res != cm{k}) {{ detect(); }}"
                         for k in range(1, copies + 1))
        return f"fn load_dup(res: int, value: int) -> int {{\n{body}\n    return 0;\n}}\n"
    if cm == "block_sig":
        checks = "\n".join("    if (load(rts) != id) { detect(); }" for _ in range(copies))
        return f"fn block_sig_check(rts: int, id: int) -> int {{\n{checks}\n    return 0;\n}}\n"
    raise KeyError(cm)


_CM_POST = {"test_dup": "c", "load_dup": "res == value", "block_sig": "rts == id"}


def countermeasure_scheme(cm: str, copies: int = 1) -> Scheme:
    src = countermeasure_source(cm, copies)
    prog = ir.parse_program(src)
    name = cm if copies == 1 else f"{copies}x{cm}"
    return Scheme(name, COUNTERMEASURE, src, cm_post=_CM_POST[cm], inputs=_domain(prog), cm=cm)


def protected_scheme(cm: str, model: str, copies: int = 1) -> Scheme:
    """The mutation scheme of ``model`` with ``cm`` inserted at its hook."""
    ms = mutation_scheme(model)
    prog = ms.program
    hook = ir.find_ip(prog, ms.hook)
    target = hook
    if cm == "test_dup" and hook.kind == ir.THEN_ELSE_JOIN:
        # Test duplication protects the branch condition of the if/else.
        target = next(ip for ip in ir.all_injection_points(prog)
                      if ip.kind == ir.CONDITIONAL_TEST and ip.site[1:] == hook.site[1:])
    protected = ir.apply_scheme(prog, target, cm, copies)
    return Scheme(f"protected_{model}_{cm}", PROTECTED, ir.format_program(protected),
                  ms.nominal_post, None, None, ms.inputs, model, ms.hook, cm)


# ---------------------------------------------------------------------------
# Adequacy


@dataclass(frozen=True)
class Adequacy:
    adequate: bool
    counterexample: Optional[Trace] = None

    def __str__(self) -> str:
        if self.adequate:
            return "adequate"
        return "KO"


def _protected_program(scheme: Scheme) -> ir.Program:
    # Re-applying the rewrite keeps the guard flags of test duplication,
    # which the printed source does not carry.
    ms = mutation_scheme(scheme.model)
    prog = ms.program
    hook = ir.find_ip(prog, ms.hook)
    target = hook
    if scheme.cm == "test_dup" and hook.kind == ir.THEN_ELSE_JOIN:
        target = next(ip for ip in ir.all_injection_points(prog)
                      if ip.kind == ir.CONDITIONAL_TEST and ip.site[1:] == hook.site[1:])
    return ir.apply_scheme(prog, target, scheme.cm, 1)


def check_adequacy(scheme: Scheme, model: str, strict: bool = False,
                   program: Optional[ir.Program] = None) -> Adequacy:
    """Single faults on the hook are detected or leave the nominal post intact.

    The countermeasure code itself is not faulted.  ``strict`` demands that
    every faulted trace is detected (the ``fault == 0`` postcondition).
    """
    if scheme.kind != PROTECTED:
        raise ValueError("adequacy is checked on protected schemes")
    if scheme.model != model:
        raise ValueError(f"scheme {scheme.name} hooks {scheme.model}, not {model}")
    prog = program if program is not None else _protected_program(scheme)
    oracle = "true" if strict else f"!({scheme.nominal_post})"
    analysis = explore(prog, scheme.inputs, [model], 1, oracle,
                       dlm_payloads=INT_DOMAIN, sites=[scheme.hook])
    for a in analysis.per_input:
        if a.attacks:
            trace = run_trace(prog, a.init, FaultPlan(a.attacks[0]))
            return Adequacy(False, trace)
        if a.count_error or a.count_step_limit:
            return Adequacy(False, None)
    return Adequacy(True)


# ---------------------------------------------------------------------------
# Protection levels


@dataclass(frozen=True)
class ProtectionLevel:
    value: Optional[int] = None
    # Set when no bypass exists within the explored bound: the level is at least this.
    at_least: Optional[int] = None
    undefined: Optional[str] = None
    witness: Optional[Trace] = None

    @property
    def defined(self) -> bool:
        return self.undefined is None

    @property
    def effective(self) -> float:
        """Level usable for comparisons; 0 when undefined."""
        if not self.defined:
            return 0
        return self.value if self.value is not None else self.at_least

    def __str__(self) -> str:
        if not self.defined:
            return f"undefined ({self.undefined})"
        if self.value is not None:
            return str(self.value)
        return f">={self.at_least}"


def protection_level(cm_scheme: Scheme, models: Iterable[str], bound: int = 8,
                     step_limit: int = DEFAULT_STEP_LIMIT) -> ProtectionLevel:
    """Minimal number of faults bypassing the countermeasure undetected.

    Condition 1: the least fault count of an undetected trace violating the
    countermeasure postcondition R.  Condition 2: every faulted trace with
    fewer faults is detected, or is harmless (R holds and the observable
    outcome equals the fault-free run).
    """
    if cm_scheme.kind != COUNTERMEASURE:
        raise ValueError("protection levels are computed on countermeasure schemes")
    if bound < 1:
        raise ValueError("bound must be >= 1")
    models = parse_models(models)
    prog = cm_scheme.program
    post = cm_scheme.cm_post
    level, at_least = None, None
    for order in range(1, bound + 1):
        bypass = explore(prog, cm_scheme.inputs, models, order, f"!({post})",
                         step_limit=step_limit, dlm_payloads=INT_DOMAIN)
        if not bypass.complete:
            return ProtectionLevel(undefined="step limit reached")
        hits = [(a, atk) for a in bypass.per_input for atk in a.attacks if len(atk) == order]
        if hits:
            level = order
            break
    else:
        at_least = bound + 1
    below = (level if level is not None else at_least) - 1
    if below >= 1:
        analysis = explore(prog, cm_scheme.inputs, models, below, post,
                           step_limit=step_limit, dlm_payloads=INT_DOMAIN)
        for a in analysis.per_input:
            if a.count_error:
                return ProtectionLevel(undefined="faulted trace ended in a runtime error")
            for atk in a.attacks:
                trace = run_trace(prog, a.init, FaultPlan(atk), step_limit)
                if trace.outcome() != a.nominal_trace.outcome():
                    return ProtectionLevel(
                        undefined=f"undetected faulted trace with {len(atk)} fault(s) below the level",
                        witness=trace)
    return ProtectionLevel(level, at_least)


# ---------------------------------------------------------------------------
# Catalog


@dataclass
class CatalogEntry:
    cm: str
    kind: str
    model: str
    adequate: Optional[bool] = None
    counterexample: Optional[list] = None
    # model-set key -> rule: {"per_copy": k, "verified_to": n} | {"const": k}
    # | {"table": [...]} | {"at_least": k} | {"undefined": reason}
    levels: dict = field(default_factory=dict)
    infinite: bool = False
    # Whether the rewrite also applies to loop conditions.
    on_loops: bool = True

    def applies_to(self, ip: ir.InjectionPoint) -> bool:
        return ip.kind == self.kind and (self.on_loops or not ip.loop)

    @property
    def adequacy(self) -> str:
        if self.adequate is None:
            return "untested"
        return "adequate" if self.adequate else "KO"

    def level_for(self, models: Iterable[str], copies: int) -> tuple:
        """(level, extrapolated) of ``copies`` instances against ``models``."""
        if self.infinite:
            return math.inf, False
        rule = self.levels.get(model_key(models))
        if rule is None or "undefined" in rule:
            return None, False
        if "per_copy" in rule:
            return rule["per_copy"] * copies, copies > rule.get("verified_to", copies)
        if "const" in rule:
            return rule["const"], copies > rule.get("verified_to", copies)
        if "at_least" in rule:
            return rule["at_least"], False
        table = rule["table"]
        if copies <= len(table):
            return table[copies - 1], False
        return table[-1], True

    def copies_for(self, models: Iterable[str], n: int) -> Optional[int]:
        """Smallest copy count reaching level ``n``, or None."""
        if self.infinite:
            return 1
        rule = self.levels.get(model_key(models))
        if rule is None or "undefined" in rule:
            return None
        if "per_copy" in rule:
            return max(1, math.ceil(n / rule["per_copy"])) if rule["per_copy"] > 0 else None
        if "const" in rule:
            return 1 if rule["const"] >= n else None
        if "at_least" in rule:
            return 1 if rule["at_least"] >= n else None
        for k, lvl in enumerate(rule["table"], start=1):
            if lvl is not None and lvl >= n:
                return k
        return None

    def max_level(self, models: Iterable[str], copies_cap: int = 3) -> tuple:
        """(level, copies) of the strongest configuration within ``copies_cap``."""
        best = (None, None)
        for k in range(1, copies_cap + 1):
            lvl, _ = self.level_for(models, k)
            if lvl is not None and (best[0] is None or lvl > best[0]):
                best = (lvl, k)
        return best

    def to_json(self) -> dict:
        d = {"cm": self.cm, "kind": self.kind, "model": self.model,
             "adequate": self.adequate, "levels": self.levels}
        if self.counterexample is not None:
            d["counterexample"] = self.counterexample
        if self.infinite:
            d["infinite"] = True
        if not self.on_loops:
            d["on_loops"] = False
        return d

    @classmethod
    def from_json(cls, d: dict) -> "CatalogEntry":
        return cls(d["cm"], d["kind"], d["model"], d.get("adequate"),
                   d.get("counterexample"), dict(d.get("levels", {})), bool(d.get("infinite", False)),
                   bool(d.get("on_loops", True)))


@dataclass(frozen=True)
class LookupResult:
    entry: CatalogEntry
    copies: int
    level: float
    sufficient: bool
    extrapolated: bool = False


class Catalog:
    def __init__(self, entries: Sequence[CatalogEntry] = ()):
        self.entries: list = []
        for e in entries:
            self.add(e)

    def add(self, entry: CatalogEntry) -> None:
        for e in self.entries:
            if (e.cm, e.model) == (entry.cm, entry.model):
                raise ValueError(f"duplicate catalog entry ({entry.cm}, {entry.model})")
        self.entries.append(entry)

    def get(self, cm: str, model: str) -> CatalogEntry:
        for e in self.entries:
            if (e.cm, e.model) == (cm, model):
                return e
        raise KeyError((cm, model))

    def candidates(self, kind: str, model: str) -> list:
        return [e for e in self.entries if e.kind == kind and e.model == model and e.adequate]

    def to_json(self) -> list:
        return [e.to_json() for e in self.entries]

    @classmethod
    def from_json(cls, data: list) -> "Catalog":
        return cls([CatalogEntry.from_json(d) for d in data])

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Catalog":
        return cls.from_json(json.loads(Path(path).read_text()))

    def __eq__(self, other) -> bool:
        return isinstance(other, Catalog) and self.to_json() == other.to_json()


def lookup(c: Catalog, ip: ir.InjectionPoint, model: str, n: int,
           models: Optional[Iterable[str]] = None) -> Optional[LookupResult]:
    """Cheapest adequate countermeasure reaching level ``n`` at ``ip``.

    When no entry reaches ``n`` the strongest available one is returned
    with ``sufficient=False``.
    """
    models = parse_models(models) if models is not None else frozenset({model})
    if model not in ip.applicable_models:
        return None
    cands = [e for e in c.candidates(ip.kind, model) if e.applies_to(ip)]
    best = None
    for e in cands:
        k = e.copies_for(models, n)
        if k is None:
            continue
        lvl, extra = e.level_for(models, k)
        if best is None or k < best.copies:
            best = LookupResult(e, k, lvl, True, extra)
    if best is not None:
        return best
    fallback = None
    for e in cands:
        lvl, k = e.max_level(models)
        if lvl is None:
            continue
        if fallback is None or lvl > fallback.level:
            fallback = LookupResult(e, k, lvl, False)
    return fallback


def _rule_from_levels(levels: list) -> dict:
    if any(not lv.defined for lv in levels):
        return {"undefined": next(lv.undefined for lv in levels if not lv.defined)}
    values = [lv.value for lv in levels]
    n = len(values)
    if all(v is None for v in values):
        return {"at_least": min(lv.at_least for lv in levels)}
    if None not in values:
        if all(v == (k + 1) * values[0] for k, v in enumerate(values)) and n > 1:
            return {"per_copy": values[0], "verified_to": n}
        if all(v == values[0] for v in values):
            return {"const": values[0], "verified_to": n}
    return {"table": [lv.value if lv.value is not None else lv.at_least for lv in levels]}


_ENTRY_SPECS = (
    ("test_dup", ir.CONDITIONAL_TEST, TI),
    ("test_dup", ir.THEN_ELSE_JOIN, EFT),
    ("block_sig", ir.CONDITIONAL_TEST, TI),
    ("block_sig", ir.THEN_ELSE_JOIN, EFT),
    ("load_dup", ir.MARKED_LOAD, DLM),
)


def build_catalog(max_copies: int = 3, bound: int = 8) -> Catalog:
    """Check every (countermeasure, model) pair and compute its levels."""
    level_rules: dict = {}
    for cm in CM_NAMES:
        rules = {}
        for ms in LEVEL_SETS:
            levels = [protection_level(countermeasure_scheme(cm, k), ms, bound)
                      for k in range(1, max_copies + 1)]
            rules[model_key(ms)] = _rule_from_levels(levels)
        level_rules[cm] = rules
    cat = Catalog()
    for cm, kind, model in _ENTRY_SPECS:
        verdict = check_adequacy(protected_scheme(cm, model), model)
        cex = None
        if verdict.counterexample is not None:
            cex = [o.to_json() for o in verdict.counterexample.plan]
        cat.add(CatalogEntry(cm, kind, model, verdict.adequate, cex, dict(level_rules[cm]),
                             on_loops=(cm != "block_sig")))
    return cat


@lru_cache(maxsize=1)
def _default_catalog_json() -> str:
    return json.dumps(build_catalog().to_json())


def default_catalog() -> Catalog:
    """The catalog computed from the bundled schemes (cached per process)."""
    return Catalog.from_json(json.loads(_default_catalog_json()))
