"""Damped Newton minimisation of the discrete penalised likelihood.

For counts ``k`` with total ``n``, base measure ``w`` and smoothing
parameter ``lam > 0`` the objective in the log-density coordinates ``eta`` is

    -(1/n) sum_y k_y eta_y + log sum_y w_y exp(eta_y) + (lam/2) sum_y eta_y^2

with gradient ``-k/n + p(eta) + lam * eta`` and Hessian
``diag(p) - p p' + lam * I``.  The Hessian is positive definite with
eigenvalues at least ``lam``.  The problem is solved unconstrained in all
``m`` coordinates.  The minimiser is centred automatically, because the
gradient summed over cells is ``lam * sum(eta)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .domain import DomainError, as_counts, as_weights


class ConvergenceError(RuntimeError):
    """Newton iteration did not reach the gradient tolerance."""

    def __init__(self, message: str, *, lam: float, iterations: int, gradient_norm: float):
        super().__init__(message)
        self.lam = lam
        self.iterations = iterations
        self.gradient_norm = gradient_norm


@dataclass(frozen=True)
class FitConfig:
    gradient_tolerance: float = 1e-9
    max_iterations: int = 50
    line_search_shrink: float = 0.5
    max_line_search_steps: int = 30

    def __post_init__(self):
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if self.max_iterations < 1 or self.max_line_search_steps < 1:
            raise ValueError("iteration counts must be at least 1")
        if not 0 < self.line_search_shrink < 1:
            raise ValueError("line_search_shrink must lie in (0, 1)")


@dataclass(frozen=True)
class FitResult:
    """A converged fit at one value of the smoothing parameter."""

    eta_hat: np.ndarray
    p_hat: np.ndarray
    lam: float
    iterations: int
    final_gradient_norm: float
    objective_value: float


def _check_lambda(lam) -> float:
    lam = float(lam)
    if not (np.isfinite(lam) and lam > 0):
        raise DomainError(f"smoothing parameter must be positive, got {lam!r}")
    return lam


# ------------------------------------------------------------------ #
# Problem representation
# ------------------------------------------------------------------ #


@dataclass(frozen=True)
class Problem:
    """Penalised likelihood problem in (possibly merged) coordinates.

    ``mult`` counts how many original cells each coordinate stands for.  In
    the full problem it is all ones.  When cells with zero counts share a
    uniform base weight they have equal fitted values, so they can be
    merged into one coordinate carrying their summed weight and ``mult``
    copies of the ridge penalty.
    """

    k_tilde: np.ndarray
    log_w: np.ndarray
    mult: np.ndarray
    n: float
    index: np.ndarray  # original cell -> coordinate

    @property
    def size(self) -> int:
        return self.k_tilde.size

    @property
    def m(self) -> int:
        return self.index.size

    @classmethod
    def full(cls, k, w) -> Problem:
        k = as_counts(k)
        w = as_weights(w, k.size)
        n = float(k.sum())
        return cls(k / n, np.log(w), np.ones(k.size), n, np.arange(k.size))

    @classmethod
    def collapsed(cls, k, w) -> Problem:
        """Merge all zero-count cells; ``w`` must be constant."""
        k = as_counts(k)
        w = as_weights(w, k.size)
        if np.ptp(w) > 1e-12 * w.max():
            raise DomainError("zero-cell collapse requires uniform weights")
        zero = k == 0
        z = int(zero.sum())
        if z == 0:
            return cls.full(k, w)
        n = float(k.sum())
        pos = np.flatnonzero(~zero)
        index = np.empty(k.size, dtype=np.intp)
        index[pos] = np.arange(pos.size)
        index[zero] = pos.size
        k_tilde = np.append(k[pos] / n, 0.0)
        log_w = np.append(np.log(w[pos]), np.log(w[zero].sum()))
        mult = np.append(np.ones(pos.size), float(z))
        return cls(k_tilde, log_w, mult, n, index)

    def expand(self, eta: np.ndarray) -> np.ndarray:
        return eta[self.index]

    def probs(self, eta: np.ndarray) -> np.ndarray:
        a = self.log_w + eta
        p = np.exp(a - logsumexp(a))
        return p / p.sum()

    def objective(self, eta: np.ndarray, lam: float) -> float:
        return float(
            -np.dot(self.k_tilde, eta)
            + logsumexp(self.log_w + eta)
            + 0.5 * lam * np.dot(self.mult, eta * eta)
        )

    def gradient(self, eta: np.ndarray, lam: float, p: np.ndarray | None = None) -> np.ndarray:
        if p is None:
            p = self.probs(eta)
        return -self.k_tilde + p + lam * self.mult * eta

    def hessian(self, p: np.ndarray, lam: float) -> np.ndarray:
        H = -np.outer(p, p)
        H[np.diag_indices_from(H)] += p + lam * self.mult
        return H


def newton(prob: Problem, lam: float, config: FitConfig, start: np.ndarray | None = None):
    """Minimise ``prob`` at ``lam``; return ``(eta, p, iterations, gnorm, objective)``."""
    eta = np.zeros(prob.size) if start is None else np.array(start, dtype=np.float64)
    f = prob.objective(eta, lam)
    p = prob.probs(eta)
    g = prob.gradient(eta, lam, p)
    gnorm = float(np.max(np.abs(g)))
    it = 0
    while gnorm > config.gradient_tolerance:
        if it >= config.max_iterations:
            raise ConvergenceError(
                f"Newton did not converge at lambda={lam:.3g} after {it} iterations "
                f"(gradient norm {gnorm:.3g})",
                lam=lam,
                iterations=it,
                gradient_norm=gnorm,
            )
        it += 1
        step = -cho_solve(cho_factor(prob.hessian(p, lam)), g)
        t = 1.0
        # accept equal objective up to rounding; near the optimum the
        # decrease is below float resolution
        slack = 8 * np.finfo(float).eps * max(1.0, abs(f))
        for _ in range(config.max_line_search_steps):
            trial = eta + t * step
            f_trial = prob.objective(trial, lam)
            if f_trial <= f + slack:
                break
            t *= config.line_search_shrink
        else:
            raise ConvergenceError(
                f"line search failed at lambda={lam:.3g} (gradient norm {gnorm:.3g})",
                lam=lam,
                iterations=it,
                gradient_norm=gnorm,
            )
        eta, f = trial, f_trial
        p = prob.probs(eta)
        g = prob.gradient(eta, lam, p)
        gnorm = float(np.max(np.abs(g)))
    if it > 0:
        eta, p, gnorm, f = _polish(prob, lam, eta, p, g, gnorm, f)
    return eta, p, it, gnorm, f


def _polish(prob: Problem, lam: float, eta, p, g, gnorm, f):
    """One extra full Newton step, kept only if it shrinks the gradient.

    At the stopping tolerance the error in ``eta`` along weakly curved
    directions is about ``gnorm / lam``; with quadratic convergence a final
    step pushes the gradient to rounding level so fits from different
    starting points or coordinate systems agree to ~1e-10.
    """
    trial = eta - cho_solve(cho_factor(prob.hessian(p, lam)), g)
    p_trial = prob.probs(trial)
    g_trial = prob.gradient(trial, lam, p_trial)
    gn_trial = float(np.max(np.abs(g_trial)))
    if gn_trial < gnorm:
        return trial, p_trial, gn_trial, prob.objective(trial, lam)
    return eta, p, gnorm, f


def fit_from_problem(problem: Problem, k, w, lam: float, eta: np.ndarray, iterations: int) -> FitResult:
    """Expand reduced coordinates to a full-length :class:`FitResult`."""
    full = Problem.full(k, w)
    eta_full = problem.expand(eta)
    eta_full.flags.writeable = False
    p_full = full.probs(eta_full)
    p_full.flags.writeable = False
    g = full.gradient(eta_full, lam, p_full)
    return FitResult(
        eta_hat=eta_full,
        p_hat=p_full,
        lam=lam,
        iterations=iterations,
        final_gradient_norm=float(np.max(np.abs(g))),
        objective_value=full.objective(eta_full, lam),
    )


# ------------------------------------------------------------------ #
# Public operations
# ------------------------------------------------------------------ #


def _setup(k, w, lam, eta):
    lam = _check_lambda(lam)
    prob = Problem.full(k, w)
    eta = np.asarray(eta, dtype=np.float64)
    if eta.shape != (prob.size,):
        raise DomainError(f"eta has shape {eta.shape}, expected ({prob.size},)")
    return prob, eta


def objective(k, w, lam, eta) -> float:
    """Penalised negative log likelihood at ``eta``."""
    prob, eta = _setup(k, w, lam, eta)
    return prob.objective(eta, float(lam))


def gradient(k, w, lam, eta) -> np.ndarray:
    prob, eta = _setup(k, w, lam, eta)
    return prob.gradient(eta, float(lam))


def hessian(k, w, lam, eta) -> np.ndarray:
    prob, eta = _setup(k, w, lam, eta)
    return prob.hessian(prob.probs(eta), float(lam))


def solve(k, w, lam, config: FitConfig | None = None, start=None) -> FitResult:
    """Fit at a fixed smoothing parameter.

    Parameters
    ----------
    k : array_like
        Non-negative counts, zero cells included.
    w : array_like
        Strictly positive base-measure weights; only their ratios matter.
    lam : float
        Smoothing parameter, ``> 0``.
    config : FitConfig, optional
    start : array_like, optional
        Starting point; defaults to ``eta = 0`` (the infinite-smoothing fit).

    Raises
    ------
    ConvergenceError
        If the gradient tolerance is not met within ``max_iterations``.
    """
    lam = _check_lambda(lam)
    config = config or FitConfig()
    prob = Problem.full(k, w)
    eta, _, it, _, _ = newton(prob, lam, config, start)
    return fit_from_problem(prob, k, w, lam, eta, it)


def stationarity_residual(fit: FitResult, k) -> float:
    """``max_y |k_y/n - p_y - lam * eta_y|``; zero at the exact minimiser."""
    k = as_counts(k)
    if k.size != fit.eta_hat.size:
        raise DomainError("fit and counts differ in length")
    return float(np.max(np.abs(k / k.sum() - fit.p_hat - fit.lam * fit.eta_hat)))
