"""Deterministic simulator and property-checking lab for parallel distributed
transactional systems."""

from .engine import (
    FairPolicy,
    RandomPolicy,
    RunResult,
    Schedule,
    SimConfig,
    inject_crash,
    run,
)
from .model import (
    CommittedHistory,
    DataPlacement,
    ExecutionTrace,
    ProcessRef,
    Step,
    TransactionProgram,
    derive_history,
    happened_before,
    partial_depth,
    step_depth,
    txn_depth,
    value_learned_events,
)
from .protocols import AlgorithmVariant
from .scenarios import Scenario, get_scenario

__all__ = [
    "AlgorithmVariant",
    "CommittedHistory",
    "DataPlacement",
    "ExecutionTrace",
    "FairPolicy",
    "ProcessRef",
    "RandomPolicy",
    "RunResult",
    "Scenario",
    "Schedule",
    "SimConfig",
    "Step",
    "TransactionProgram",
    "derive_history",
    "get_scenario",
    "happened_before",
    "inject_crash",
    "partial_depth",
    "run",
    "step_depth",
    "txn_depth",
    "value_learned_events",
]
