"""Spike-and-slab Lasso estimation for Gaussian conditional random fields."""

from .model import (
    Hyperparams,
    ModelState,
    NotPositiveDefiniteError,
    ProblemDims,
    SufficientStats,
    compute_sufficient_stats,
    initialize_state,
)
from .penalty import InclusionProbs, compute_inclusion_probs
from .solver import SolverConfig, SolverTrace, fit, negative_log_posterior

__version__ = "0.1.0"
