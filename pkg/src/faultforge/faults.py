"""Fault models and the data describing injected faults."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from .mini_ir import ip_sort_key

TI = "ti"
DLM = "dlm"
EFT = "eft"
MODEL_NAMES = (TI, DLM, EFT)

EXIT_IF = "exit-if"
FALL_INTO_ELSE = "fall-into-else"


@dataclass(frozen=True)
class FaultModel:
    name: str
    # Extra DLM payloads appended to the per-value default domain.
    payloads: tuple = ()

    def __post_init__(self):
        if self.name not in MODEL_NAMES:
            raise ValueError(f"unknown fault model {self.name!r}")
        if self.payloads and self.name != DLM:
            raise ValueError("only the dlm model carries payloads")

    def __str__(self) -> str:
        return self.name


def parse_models(spec: Union[str, Iterable[str]]) -> frozenset:
    """Parse ``"ti,dlm"`` or a list of names into a set of model names."""
    if isinstance(spec, str):
        spec = [s for s in spec.split(",") if s.strip()]
    names = frozenset(s.strip().lower() for s in spec)
    for n in names:
        if n not in MODEL_NAMES:
            raise ValueError(f"unknown fault model {n!r}")
    return names


@dataclass(frozen=True)
class FaultDecision:
    active: bool = False
    payload: Optional[int] = None


INACTIVE = FaultDecision()


def apply_ti(cond_value: bool, d: FaultDecision) -> bool:
    """Test inversion: an active fault flips the branch outcome."""
    return (not cond_value) if d.active else cond_value


def apply_dlm(value, d: FaultDecision):
    """Data-load modification: an active fault substitutes its payload.

    A payload equal to the loaded value is a legal, harmless fault.
    """
    if not d.active:
        return value
    if d.payload is None:
        raise ValueError("active dlm decision without payload")
    return d.payload


def eft_successor(branch_taken: str, d: FaultDecision) -> str:
    """Else-following-then: an active fault skips the jump ending a then block."""
    if branch_taken not in ("then", "else"):
        raise ValueError(branch_taken)
    if d.active and branch_taken == "then":
        return FALL_INTO_ELSE
    return EXIT_IF


def dlm_payload_domain(value, extra: Sequence[int] = ()) -> list:
    """Finite replacement values for a load of ``value``.

    Defaults to 0, value+1 and value with its lowest bit flipped, followed
    by ``extra``; duplicates are dropped, order kept.  Bool loads can take
    either truth value.
    """
    if isinstance(value, bool):
        candidates = [not value, value]
    else:
        candidates = [0, value + 1, value ^ 1, *extra]
    out = []
    for c in candidates:
        if c not in out:
            out.append(c)
    return out


@dataclass(frozen=True)
class FaultOccurrence:
    ip: str
    model: str
    dyn_index: int
    payload: Optional[Union[int, bool]] = None

    def label(self) -> str:
        text = f"{self.ip}({self.model.upper()})@{self.dyn_index}"
        if self.payload is not None:
            text += f"={self.payload}"
        return text

    def to_json(self) -> dict:
        return {"ip": self.ip, "model": self.model, "occ": self.dyn_index, "payload": self.payload}

    @classmethod
    def from_json(cls, d: dict) -> "FaultOccurrence":
        return cls(d["ip"], d["model"], int(d["occ"]), d.get("payload"))

    def sort_key(self) -> tuple:
        payload = (0, 0) if self.payload is None else (1, int(self.payload))
        return (ip_sort_key(self.ip), self.model, self.dyn_index, payload)


def attack_sort_key(attack: Sequence[FaultOccurrence]) -> tuple:
    """Canonical attack order: by length, then occurrence by occurrence."""
    return (len(attack), tuple(o.sort_key() for o in attack))


@dataclass(frozen=True)
class FaultPlan:
    schedule: tuple = ()

    def __len__(self) -> int:
        return len(self.schedule)

    def __iter__(self):
        return iter(self.schedule)

    @classmethod
    def of(cls, *occurrences: FaultOccurrence) -> "FaultPlan":
        return cls(tuple(occurrences))
