"""Choice of the smoothing parameter over a grid of log10(lambda) values.

Two selectors share one grid sweep.  ``select_lambda_cv`` minimises a
delete-one cross-validation score, available from data alone.
``select_lambda_oracle`` minimises ``KL(p_true, p_hat)`` and is usable only
in simulations.  Ties go to the larger lambda.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .domain import DomainError, as_composition, as_counts, as_weights, kl_divergence
from .solver import (
    ConvergenceError,
    FitConfig,
    FitResult,
    Problem,
    _check_lambda,
    fit_from_problem,
    newton,
    solve,
)

DEFAULT_ALPHA = 1.4


@dataclass(frozen=True)
class LambdaGrid:
    """Strictly monotone grid of log10(lambda), swept in the stored order.

    The default runs from 2 down to -6 in steps of 0.1, so sweeps start at
    heavy smoothing and warm-start towards the raw proportions.
    """

    log10_values: tuple[float, ...] = field(
        default_factory=lambda: tuple(np.round(np.linspace(2.0, -6.0, 81), 10))
    )

    def __post_init__(self):
        v = np.asarray(self.log10_values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("lambda grid must be a non-empty sequence")
        if not np.all(np.isfinite(v)):
            raise ValueError("lambda grid must be finite")
        d = np.diff(v)
        if v.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("lambda grid must be strictly monotone")
        object.__setattr__(self, "log10_values", tuple(float(x) for x in v))

    @classmethod
    def from_bounds(cls, lo: float = -6.0, hi: float = 2.0, step: float = 0.1) -> LambdaGrid:
        if not (step > 0 and hi >= lo):
            raise ValueError("need step > 0 and hi >= lo")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return cls(tuple(np.round(hi - step * np.arange(count), 10)))

    @property
    def lambdas(self) -> np.ndarray:
        return 10.0 ** np.asarray(self.log10_values)

    def __len__(self) -> int:
        return len(self.log10_values)


@dataclass(frozen=True)
class TraceRecord:
    lam: float
    log10_lam: float
    score: float  # nan when the fit failed
    iterations: int
    gradient_norm: float
    converged: bool


@dataclass(frozen=True)
class SelectionTrace:
    criterion: str  # "cv" or "kl"
    records: tuple[TraceRecord, ...]
    chosen_index: int

    @property
    def chosen_lambda(self) -> float:
        return self.records[self.chosen_index].lam

    @property
    def scores(self) -> np.ndarray:
        return np.array([r.score for r in self.records])

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "chosen_index": self.chosen_index,
            "chosen_lambda": self.chosen_lambda,
            "chosen_log10_lambda": self.records[self.chosen_index].log10_lam,
            "records": [
                {
                    "lambda": r.lam,
                    "log10_lambda": r.log10_lam,
                    "score": None if math.isnan(r.score) else r.score,
                    "iterations": r.iterations,
                    "gradient_norm": r.gradient_norm,
                    "converged": r.converged,
                }
                for r in self.records
            ],
        }


# ------------------------------------------------------------------ #
# Cross-validation score
# ------------------------------------------------------------------ #


def _deflated_factor(prob: Problem, p: np.ndarray, lam: float):
    """Cholesky factor of the Hessian with its ``1``-direction lifted.

    ``H 1 = lam * 1`` in the full problem, and every vector the CV score
    feeds through ``H^{-1}`` sums to zero.  Adding ``mult mult' / sum(mult)``
    leaves ``H^{-1}`` unchanged on those vectors but removes the
    ``1/lam`` eigenvalue that would otherwise dominate the rounding error at
    small lambda.
    """
    H = prob.hessian(p, lam)
    H += np.outer(prob.mult, prob.mult) / prob.mult.sum()
    return cho_factor(H)


def _cv_from_problem(prob: Problem, eta: np.ndarray, lam: float, alpha: float) -> float:
    if prob.n <= 1:
        raise DomainError("cross-validation needs total count n > 1")
    p = prob.probs(eta)
    kt = prob.k_tilde
    fit_terms = -np.dot(kt, eta) + logsumexp(prob.log_w + eta)
    # sum_y kt_y (e_y - kt)' H^{-1} e_y over the cells with positive counts;
    # merged zero cells carry kt = 0 and drop out
    fac = _deflated_factor(prob, p, lam)
    pos = np.flatnonzero(kt > 0)
    E = np.zeros((prob.size, pos.size))
    E[pos, np.arange(pos.size)] = 1.0
    D = E - kt[:, None]
    HinvD = cho_solve(fac, D)
    trace = float(np.dot(kt[pos], HinvD[pos, np.arange(pos.size)]))
    return float(fit_terms + alpha * trace / (prob.n - 1))


def cv_score(fit: FitResult, k, w, alpha: float = DEFAULT_ALPHA) -> float:
    """Delete-one cross-validation score of a converged fit.

    The score is the likelihood part of the objective at ``eta_hat``
    plus ``alpha/(n-1) * sum_y kt_y (e_y - kt)' H^{-1} e_y``.  Here ``kt``
    holds the proportions ``k/n`` and ``H`` is the Hessian at the fit.  The
    added term corrects the in-sample log likelihood to its leave-one-out
    version.  It uses the one-step Newton approximation
    ``eta[-z] ~= eta_hat - H^{-1} (e_z - kt) / (n - 1)``, implemented by
    :func:`loo_one_step`.  ``alpha > 1`` inflates the correction and so
    favours smoother fits.
    """
    if alpha < 1:
        raise DomainError("alpha must be at least 1")
    prob = Problem.full(k, w)
    if prob.size != fit.eta_hat.size:
        raise DomainError("fit and counts differ in length")
    return _cv_from_problem(prob, np.asarray(fit.eta_hat), fit.lam, alpha)


def loo_one_step(fit: FitResult, k, w, z: int) -> np.ndarray:
    """One-step Newton approximation to the fit with one count removed from cell ``z``."""
    prob = Problem.full(k, w)
    if prob.n <= 1:
        raise DomainError("need n > 1")
    d = -prob.k_tilde.copy()
    d[z] += 1.0
    fac = _deflated_factor(prob, fit.p_hat, fit.lam)
    return np.asarray(fit.eta_hat) - cho_solve(fac, d) / (prob.n - 1)


def loo_refit(k, w, lam, z: int, config: FitConfig | None = None) -> FitResult:
    """Exact refit with one count removed from cell ``z``."""
    k = as_counts(k)
    if k[z] < 1:
        raise DomainError(f"cell {z} has fewer than one count to remove")
    if k.sum() <= 1:
        raise DomainError("need n > 1")
    reduced = k.copy()
    reduced[z] -= 1.0
    return solve(reduced, w, lam, config)


# ------------------------------------------------------------------ #
# Grid sweep and selectors
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class GridSweep:
    """Fits along a grid in one problem representation.

    ``etas[i]`` is ``None`` where the solver failed.  Fits are kept in the
    problem's own (possibly merged) coordinates; :meth:`fit` expands one.
    """

    problem: Problem
    k: np.ndarray
    w: np.ndarray
    grid: LambdaGrid
    etas: tuple
    iterations: tuple[int, ...]
    gradient_norms: tuple[float, ...]

    def fit(self, i: int) -> FitResult:
        eta = self.etas[i]
        if eta is None:
            raise ConvergenceError(
                f"no fit at grid point {i}",
                lam=float(self.grid.lambdas[i]),
                iterations=self.iterations[i],
                gradient_norm=self.gradient_norms[i],
            )
        return fit_from_problem(
            self.problem, self.k, self.w, float(self.grid.lambdas[i]), eta, self.iterations[i]
        )

    def probs(self, i: int) -> np.ndarray:
        """Full-length composition at grid point ``i``."""
        a = np.log(self.w) + self.problem.expand(self.etas[i])
        p = np.exp(a - logsumexp(a))
        return p / p.sum()


def sweep_grid(
    k,
    w,
    grid: LambdaGrid | None = None,
    config: FitConfig | None = None,
    *,
    warm_start: bool = True,
    zero_collapse: bool = False,
) -> GridSweep:
    """Fit every grid point, warm-starting each from its predecessor.

    A point whose Newton iteration fails is recorded and skipped; the next
    point then starts from the last successful fit.
    """
    k = as_counts(k)
    w = as_weights(w, k.size)
    grid = grid or LambdaGrid()
    config = config or FitConfig()
    prob = Problem.collapsed(k, w) if zero_collapse else Problem.full(k, w)
    etas, its, gns = [], [], []
    start = None
    for lam in grid.lambdas:
        try:
            eta, _, it, gn, _ = newton(prob, float(lam), config, start)
        except ConvergenceError as exc:
            etas.append(None)
            its.append(exc.iterations)
            gns.append(exc.gradient_norm)
            continue
        etas.append(eta)
        its.append(it)
        gns.append(gn)
        if warm_start:
            start = eta
    if all(e is None for e in etas):
        raise ConvergenceError(
            "solver failed at every grid point",
            lam=float(grid.lambdas[-1]),
            iterations=its[-1],
            gradient_norm=gns[-1],
        )
    return GridSweep(prob, k, w, grid, tuple(etas), tuple(its), tuple(gns))


def _choose(sweep: GridSweep, scores: list[float], criterion: str) -> tuple[FitResult, SelectionTrace]:
    lams = sweep.grid.lambdas
    records = tuple(
        TraceRecord(
            lam=float(lams[i]),
            log10_lam=sweep.grid.log10_values[i],
            score=scores[i],
            iterations=sweep.iterations[i],
            gradient_norm=sweep.gradient_norms[i],
            converged=sweep.etas[i] is not None,
        )
        for i in range(len(lams))
    )
    valid = [i for i in range(len(lams)) if not math.isnan(scores[i])]
    best = min(scores[i] for i in valid)
    # ties go to the largest lambda
    chosen = max((i for i in valid if scores[i] == best), key=lambda i: lams[i])
    trace = SelectionTrace(criterion, records, chosen)
    return sweep.fit(chosen), trace


def cv_scores(sweep: GridSweep, alpha: float = DEFAULT_ALPHA) -> list[float]:
    if alpha < 1:
        raise DomainError("alpha must be at least 1")
    lams = sweep.grid.lambdas
    return [
        math.nan if eta is None else _cv_from_problem(sweep.problem, eta, float(lam), alpha)
        for eta, lam in zip(sweep.etas, lams)
    ]


def kl_losses(sweep: GridSweep, p_true) -> list[float]:
    p_true = as_composition(p_true, sweep.k.size)
    return [
        math.nan if sweep.etas[i] is None else kl_divergence(p_true, sweep.probs(i))
        for i in range(len(sweep.etas))
    ]


def select_from_sweep_cv(sweep: GridSweep, alpha: float = DEFAULT_ALPHA):
    return _choose(sweep, cv_scores(sweep, alpha), "cv")


def select_from_sweep_oracle(sweep: GridSweep, p_true):
    return _choose(sweep, kl_losses(sweep, p_true), "kl")


def select_lambda_cv(
    k,
    w,
    grid: LambdaGrid | None = None,
    alpha: float = DEFAULT_ALPHA,
    config: FitConfig | None = None,
    *,
    zero_collapse: bool = False,
) -> tuple[FitResult, SelectionTrace]:
    """Fit the grid and return the fit minimising the CV score."""
    sweep = sweep_grid(k, w, grid, config, zero_collapse=zero_collapse)
    return select_from_sweep_cv(sweep, alpha)


def select_lambda_oracle(
    k,
    w,
    grid: LambdaGrid | None = None,
    p_true=None,
    config: FitConfig | None = None,
    *,
    zero_collapse: bool = False,
) -> tuple[FitResult, SelectionTrace]:
    """Fit the grid and return the fit minimising ``KL(p_true, p_hat)``."""
    if p_true is None:
        raise DomainError("oracle selection needs the true composition")
    sweep = sweep_grid(k, w, grid, config, zero_collapse=zero_collapse)
    return select_from_sweep_oracle(sweep, p_true)


def fit_fixed(k, w, lam, config: FitConfig | None = None, *, zero_collapse: bool = False) -> FitResult:
    """Single fit at a user-supplied lambda, optionally with zero-cell merging."""
    lam = _check_lambda(lam)
    k = as_counts(k)
    w = as_weights(w, k.size)
    prob = Problem.collapsed(k, w) if zero_collapse else Problem.full(k, w)
    eta, _, it, _, _ = newton(prob, lam, config or FitConfig())
    return fit_from_problem(prob, k, w, lam, eta, it)
