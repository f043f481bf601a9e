"""Harness files: a program, its inputs and the analysis parameters."""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from . import mini_ir as ir
from .explorer import DEFAULT_STEP_LIMIT, AttackAnalysis, check_inputs, explore
from .faults import TI, parse_models

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

STEP_LIMIT_ENV = "FAULTFORGE_STEP_LIMIT"
BENCHMARKS = ("bac_v1", "bac_v2", "vp4", "fu_toy")


class HarnessError(ValueError):
    pass


@dataclass(frozen=True)
class Harness:
    program: ir.Program
    inputs: tuple
    models: frozenset = frozenset({TI})
    max_order: int = 1
    oracle: str = "true"
    dlm_payloads: tuple = ()
    step_limit: int = DEFAULT_STEP_LIMIT
    input_ids: tuple = ()
    name: str = ""
    source: str = field(default="", compare=False)

    @property
    def ids(self) -> list:
        return list(self.input_ids) or [f"i{k}" for k in range(len(self.inputs))]

    def digest(self) -> str:
        """Hash of the analysis parameters.

        The program is left out on purpose: comparing a hardened program
        against its original requires identical inputs, models, oracle and
        order, not identical code.
        """
        blob = json.dumps({
            "inputs": list(self.inputs), "ids": self.ids, "models": sorted(self.models),
            "max_order": self.max_order, "oracle": self.oracle,
            "dlm_payloads": list(self.dlm_payloads),
        }, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **kw) -> "Harness":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "models" in kw:
            kw["models"] = parse_models(kw["models"])
        return replace(self, **kw)

    def explore(self, program: Optional[ir.Program] = None, max_order: Optional[int] = None,
                jobs: int = 1) -> AttackAnalysis:
        return explore(program if program is not None else self.program, self.inputs,
                       self.models, self.max_order if max_order is None else max_order,
                       self.oracle, self.step_limit, self.dlm_payloads,
                       input_ids=self.ids, jobs=jobs)


def _bundled_dir():
    return resources.files("faultforge.benchmarks")


def resolve_harness_path(path: Union[str, Path]) -> Path:
    """An existing path, or the name of a bundled harness (``bac_v1.toml``, ``vp4``)."""
    p = Path(path)
    if p.exists():
        return p
    name = p.name if p.suffix else p.name + ".toml"
    bundled = Path(str(_bundled_dir().joinpath(name)))
    if bundled.exists():
        return bundled
    raise HarnessError(f"harness not found: {path}")


def load_harness(path: Union[str, Path]) -> Harness:
    path = resolve_harness_path(path)
    try:
        text = path.read_text()
        data = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (OSError, ValueError) as exc:
        raise HarnessError(f"cannot read harness {path}: {exc}") from exc
    return harness_from_dict(data, base=path.parent, name=path.stem)


def harness_from_dict(data: dict, base: Union[str, Path] = ".", name: str = "") -> Harness:
    unknown = set(data) - {"program", "entry", "inputs", "input_ids", "models", "dlm_payloads",
                           "max_order", "oracle", "step_limit"}
    if unknown:
        raise HarnessError(f"unknown harness keys: {sorted(unknown)}")
    if "program" not in data:
        raise HarnessError("harness lacks a program")
    prog_path = Path(base) / data["program"]
    try:
        src = prog_path.read_text()
    except OSError as exc:
        raise HarnessError(f"cannot read program {prog_path}: {exc}") from exc
    try:
        program = ir.parse_program(src, data.get("entry"))
    except ir.MiniCError as exc:
        raise HarnessError(f"{prog_path}: {exc}") from exc
    inputs = data.get("inputs", [])
    if not inputs:
        raise HarnessError("harness has no inputs")
    try:
        inputs = tuple(check_inputs(program, inputs))
        models = parse_models(data.get("models", [TI]))
    except ValueError as exc:
        raise HarnessError(str(exc)) from exc
    step_limit = int(os.environ.get(STEP_LIMIT_ENV) or data.get("step_limit", DEFAULT_STEP_LIMIT))
    if step_limit <= 0:
        raise HarnessError("step_limit must be positive")
    max_order = int(data.get("max_order", 1))
    if max_order < 0:
        raise HarnessError("max_order must be >= 0")
    ids = tuple(data.get("input_ids", ()))
    if ids and len(ids) != len(inputs):
        raise HarnessError("input_ids and inputs differ in length")
    return Harness(program, inputs, models, max_order, data.get("oracle", "true"),
                   tuple(data.get("dlm_payloads", ())), step_limit, ids, name, src)


def bundled_harness(name: str) -> Harness:
    return load_harness(resolve_harness_path(name))


def bundle_benchmarks(dest: Union[str, Path]) -> list:
    """Copy the bundled programs, harnesses and scheme programs to ``dest``."""
    dest = Path(dest)
    (dest / "schemes").mkdir(parents=True, exist_ok=True)
    written = []
    for pkg, sub in (("faultforge.benchmarks", ""), ("faultforge.schemes", "schemes")):
        for entry in resources.files(pkg).iterdir():
            if entry.name.endswith((".mc", ".toml", ".json")):
                target = dest / sub / entry.name
                target.write_text(entry.read_text())
                written.append(target)
    from .catalog import CM_NAMES, countermeasure_source
    for cm in CM_NAMES:
        target = dest / "schemes" / f"{cm}.mc"
        target.write_text(countermeasure_source(cm, 1))
        written.append(target)
    return sorted(written)
