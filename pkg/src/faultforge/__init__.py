"""Multi-fault robustness analysis and countermeasure placement for MiniC programs."""

from .mini_ir import (
    InjectionPoint,
    Program,
    apply_scheme,
    enumerate_injection_points,
    format_program,
    parse_program,
)
from .faults import FaultOccurrence, FaultPlan, apply_dlm, apply_ti, eft_successor
from .explorer import AttackAnalysis, Trace, explore, run_trace

__all__ = [
    "AttackAnalysis", "FaultOccurrence", "FaultPlan", "InjectionPoint", "Program", "Trace",
    "apply_dlm", "apply_scheme", "apply_ti", "eft_successor", "enumerate_injection_points",
    "explore", "format_program", "parse_program", "run_trace",
]

__version__ = "0.1.0"
