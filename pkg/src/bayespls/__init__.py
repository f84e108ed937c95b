"""Bayes-optimal pseudo-label selection for self-training logistic models."""

from .criteria import Candidate, CriterionSpec, OracleSettings, score_pool
from .engine import EngineConfig, StopRule, run
from .glm import Dataset, FitSettings, ModelSpec, fit_map
from .weighting import ipw_weights, weighted_refit

__version__ = "0.1.0"

__all__ = [
    "Candidate",
    "CriterionSpec",
    "Dataset",
    "EngineConfig",
    "FitSettings",
    "ModelSpec",
    "OracleSettings",
    "StopRule",
    "fit_map",
    "ipw_weights",
    "run",
    "score_pool",
    "weighted_refit",
]
