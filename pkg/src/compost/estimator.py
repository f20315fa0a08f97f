"""Single-sample and two-stage composition estimators."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .domain import DomainError, as_counts, as_weights, kl_divergence, uniform_weights
from .selection import DEFAULT_ALPHA, LambdaGrid, SelectionTrace, select_lambda_cv
from .solver import FitConfig, FitResult, Problem, _check_lambda, fit_from_problem, newton

ZERO_COLLAPSE_FRACTION = 0.25


def _is_uniform(w: np.ndarray) -> bool:
    return bool(np.ptp(w) <= 1e-12 * w.max())


def _auto_collapse(k: np.ndarray, w: np.ndarray) -> bool:
    return _is_uniform(w) and bool(np.mean(k == 0) >= ZERO_COLLAPSE_FRACTION)


def worker_count(requested: int | None = None) -> int:
    """Threads for column fits: ``requested``, else ``COMPOST_THREADS``, else 1."""
    if requested is None:
        env = os.environ.get("COMPOST_THREADS", "").strip()
        requested = int(env) if env else 1
    return max(1, int(requested))


def solve_with_zero_collapse(k, w, lam, config: FitConfig | None = None) -> FitResult:
    """Fit at fixed lambda with all zero-count cells merged into one coordinate.

    Valid only for uniform ``w``.  Cells with zero counts then have identical
    fitted values, so the Newton system shrinks from ``m`` to the number of
    positive cells plus one.
    """
    lam = _check_lambda(lam)
    k = as_counts(k)
    w = as_weights(w, k.size)
    prob = Problem.collapsed(k, w)
    eta, _, it, _, _ = newton(prob, lam, config or FitConfig())
    return fit_from_problem(prob, k, w, lam, eta, it)


def sscomp(
    k,
    w=None,
    alpha: float = DEFAULT_ALPHA,
    grid: LambdaGrid | None = None,
    config: FitConfig | None = None,
    *,
    zero_collapse: bool | None = None,
) -> tuple[np.ndarray, SelectionTrace]:
    """Cross-validated composition estimate from one count vector.

    Parameters
    ----------
    k : array_like
        Counts for every cell, zeros included (the length defines ``m``).
    w : array_like, optional
        Base-measure weights.  Defaults to uniform; pass a prior composition
        to shrink towards its shape instead.
    alpha : float
        CV correction multiplier.
    zero_collapse : bool, optional
        Merge zero cells during fitting.  By default this is on when ``w`` is
        uniform and at least a quarter of the cells are empty.

    Returns
    -------
    p_hat : ndarray
        Strictly positive, sums to one.
    trace : SelectionTrace
    """
    k = as_counts(k)
    w = uniform_weights(k.size) if w is None else as_weights(w, k.size)
    if zero_collapse is None:
        zero_collapse = _auto_collapse(k, w)
    fit, trace = select_lambda_cv(k, w, grid, alpha, config, zero_collapse=zero_collapse)
    return fit.p_hat, trace


@dataclass(frozen=True)
class TwoStageFit:
    """Output of :func:`fit_two_stage`.

    ``probs`` is ``m x s`` with columns summing to one; ``prior`` is the
    cross-validated estimate from the collapsed counts.  ``prior_kl[x]`` is
    ``KL(prior, probs[:, x])``, an advisory measure of how far column ``x``
    departs from the pooled shape.
    """

    probs: np.ndarray
    prior: np.ndarray
    prior_trace: SelectionTrace
    traces: tuple[SelectionTrace, ...]
    prior_kl: np.ndarray


def as_count_matrix(K) -> np.ndarray:
    K = np.array(K, dtype=np.float64)
    if K.ndim == 1:
        K = K[:, None]
    if K.ndim != 2 or K.shape[0] < 1 or K.shape[1] < 1:
        raise DomainError(f"count matrix must be 2-d and non-empty, got shape {K.shape}")
    if not np.all(np.isfinite(K)) or np.any(K < 0):
        raise DomainError("count matrix must hold finite non-negative values")
    empty = np.flatnonzero(K.sum(axis=0) <= 0)
    if empty.size:
        raise DomainError(f"column {int(empty[0])} has zero total")
    return K


def fit_two_stage(
    K,
    alpha: float = DEFAULT_ALPHA,
    grid: LambdaGrid | None = None,
    config: FitConfig | None = None,
    *,
    threads: int | None = None,
) -> TwoStageFit:
    """Pool the columns for a prior, then fit each column against it."""
    K = as_count_matrix(K)
    prior, prior_trace = sscomp(K.sum(axis=1), None, alpha, grid, config)

    def one(col: int):
        return sscomp(K[:, col], prior, alpha, grid, config)

    n_workers = min(worker_count(threads), K.shape[1])
    if n_workers > 1:
        with ThreadPoolExecutor(n_workers) as pool:
            fits = list(pool.map(one, range(K.shape[1])))
    else:
        fits = [one(c) for c in range(K.shape[1])]
    probs = np.column_stack([p for p, _ in fits])
    prior_kl = np.array([kl_divergence(prior, p) for p, _ in fits])
    return TwoStageFit(probs, prior, prior_trace, tuple(t for _, t in fits), prior_kl)


def sscomp2(K, alpha: float = DEFAULT_ALPHA, grid: LambdaGrid | None = None, config: FitConfig | None = None):
    """Two-stage estimate for an ``m x s`` count matrix; returns an ``m x s`` composition matrix."""
    return fit_two_stage(K, alpha, grid, config).probs
