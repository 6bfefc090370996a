"""Cost-aware sequential design for fitting and extrapolating scaling laws."""

from .acquisition import DEFAULT_ALPHA, GridConfig, score_candidates, utilities
from .engine import DesignConfig, EpisodeLog, Policy, all_data_reference, run_episode
from .fitting import Dataset, FitResult, best_fit, fit_multistart
from .instance import Instance
from .laws import CostModel, LawSpec, make_spec, predict
from .posterior import Posterior, WeightConfig, estimate_posterior

__all__ = [
    "DEFAULT_ALPHA",
    "CostModel",
    "Dataset",
    "DesignConfig",
    "EpisodeLog",
    "FitResult",
    "GridConfig",
    "Instance",
    "LawSpec",
    "Policy",
    "Posterior",
    "WeightConfig",
    "all_data_reference",
    "best_fit",
    "estimate_posterior",
    "fit_multistart",
    "make_spec",
    "predict",
    "run_episode",
    "score_candidates",
    "utilities",
]
