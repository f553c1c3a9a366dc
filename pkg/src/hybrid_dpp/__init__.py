"""Hybrid-control trial designs with dynamic power-prior borrowing for binary endpoints."""

__version__ = "0.1.0"

from .betacalc import BetaParams, DomainError, NumericError, beta_cdf, beta_quantile, prob_superiority
from .borrowing import (
    BorrowingPolicy,
    HistoricalControl,
    Method,
    dynamic_weight,
    eess,
    overall_weight,
)
from .engine import (
    EXACT,
    DesignSpec,
    Exact,
    MonteCarlo,
    OCResult,
    Scenario,
    calibrate_tau,
    oc_sweep,
    operating_characteristics,
    outcome_table,
)
from .optimizer import BorrowingTemplate, OptimizationConstraints, min_sample_size
from .posterior import TrialOutcome, decide, hybrid_posterior, pmd

__all__ = [
    "__version__",
    "BetaParams",
    "DomainError",
    "NumericError",
    "beta_cdf",
    "beta_quantile",
    "prob_superiority",
    "BorrowingPolicy",
    "HistoricalControl",
    "Method",
    "dynamic_weight",
    "eess",
    "overall_weight",
    "EXACT",
    "DesignSpec",
    "Exact",
    "MonteCarlo",
    "OCResult",
    "Scenario",
    "calibrate_tau",
    "oc_sweep",
    "operating_characteristics",
    "outcome_table",
    "BorrowingTemplate",
    "OptimizationConstraints",
    "min_sample_size",
    "TrialOutcome",
    "decide",
    "hybrid_posterior",
    "pmd",
]
