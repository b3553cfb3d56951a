"""Differential privacy verification against attackers with partial background knowledge."""

from pkdp.errors import (
    DimensionMismatch,
    EngineInfeasible,
    InvariantViolation,
    NotExchangeable,
    RejectionBudgetExceeded,
    ScenarioError,
    ZeroMassEvent,
)
from pkdp.model import BINARY, RecordAlphabet, Scenario
from pkdp.verifier import (
    AttackerModel,
    ExactEngine,
    TermReport,
    TightDelta,
    apk_term,
    apk_tight_delta,
    condition_family,
    delta_curve,
    epsilon_for_delta,
    ppk_term,
    ppk_tight_delta,
    tight_delta_dp,
    tight_delta_indist,
)

__all__ = [
    "AttackerModel", "BINARY", "DimensionMismatch", "EngineInfeasible", "ExactEngine",
    "InvariantViolation", "NotExchangeable", "RecordAlphabet", "RejectionBudgetExceeded",
    "Scenario", "ScenarioError", "TermReport", "TightDelta", "ZeroMassEvent", "apk_term",
    "apk_tight_delta", "condition_family", "delta_curve", "epsilon_for_delta", "ppk_term",
    "ppk_tight_delta", "tight_delta_dp", "tight_delta_indist",
]
