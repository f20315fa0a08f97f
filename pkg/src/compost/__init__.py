"""Composition estimation by penalised likelihood on a nominal domain."""

from .domain import (
    DomainError,
    empirical_composition,
    kl_divergence,
    quadratic_proxy_V,
    to_composition,
)
from .estimator import fit_two_stage, solve_with_zero_collapse, sscomp, sscomp2
from .selection import LambdaGrid, SelectionTrace, cv_score, select_lambda_cv, select_lambda_oracle
from .solver import ConvergenceError, FitConfig, FitResult, solve

__all__ = [
    "ConvergenceError",
    "DomainError",
    "FitConfig",
    "FitResult",
    "LambdaGrid",
    "SelectionTrace",
    "cv_score",
    "empirical_composition",
    "fit_two_stage",
    "kl_divergence",
    "quadratic_proxy_V",
    "select_lambda_cv",
    "select_lambda_oracle",
    "solve",
    "solve_with_zero_collapse",
    "sscomp",
    "sscomp2",
    "to_composition",
]
