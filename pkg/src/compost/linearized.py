"""Linearised estimator and error-rate diagnostics.

Replacing the log-partition term by its quadratic expansion around the true
log density ``eta0`` gives a ridge problem whose minimiser is linear in the
observed proportions:

    eta_tilde - eta0 = (lam I + V0)^{-1} ((k/n - p0) - lam eta0),
    V0 = diag(p0) - p0 p0'.

Its penalised error ``(eta_tilde - eta0)' (lam I + V0) (eta_tilde - eta0)``
has an exact expectation, a bias part plus a variance part, and both are
bounded above by ``lam * eta0'eta0 + 1/(n lam)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .domain import DomainError, _check_lengths, as_composition, as_weights, quadratic_proxy_V, to_composition
from .solver import FitConfig, _check_lambda, solve


def eta_from_composition(p0, w) -> np.ndarray:
    """Centred log density of ``p0`` relative to ``w``."""
    p0 = as_composition(p0)
    w = as_weights(w, p0.size)
    r = np.log(p0) - np.log(w)
    eta = r - r.mean()
    eta.flags.writeable = False
    return eta


@dataclass(frozen=True)
class TruthSpec:
    p0: np.ndarray
    eta0: np.ndarray
    w: np.ndarray

    @classmethod
    def from_composition(cls, p0, w=None) -> TruthSpec:
        p0 = as_composition(p0)
        w = np.ones(p0.size) if w is None else as_weights(w, p0.size)
        return cls(p0, eta_from_composition(p0, w), w)

    @classmethod
    def from_eta(cls, eta0, w=None) -> TruthSpec:
        eta0 = np.asarray(eta0, dtype=float)
        eta0 = eta0 - eta0.mean()
        w = np.ones(eta0.size) if w is None else as_weights(w, eta0.size)
        return cls(to_composition(eta0, w), eta0, w)

    @property
    def m(self) -> int:
        return self.p0.size

    def covariance(self) -> np.ndarray:
        """``diag(p0) - p0 p0'``, also ``n`` times the covariance of ``k/n``."""
        return np.diag(self.p0) - np.outer(self.p0, self.p0)


def proxy_eigenvalues(p0) -> np.ndarray:
    """Eigenvalues of ``diag(p0) - p0 p0'``, ascending, clipped at zero."""
    p0 = as_composition(p0)
    rho = np.linalg.eigvalsh(np.diag(p0) - np.outer(p0, p0))
    return np.clip(rho, 0.0, None)


def _system(truth: TruthSpec, lam: float) -> np.ndarray:
    A = truth.covariance()
    A[np.diag_indices_from(A)] += lam
    return A


def linearized_estimate(k_tilde, truth: TruthSpec, lam) -> np.ndarray:
    """Minimiser of the quadratic approximation; ``k_tilde`` may be ``(m,)`` or ``(reps, m)``."""
    lam = _check_lambda(lam)
    kt = np.asarray(k_tilde, dtype=float)
    if kt.shape[-1] != truth.m:
        raise DomainError(f"k_tilde has {kt.shape[-1]} cells, truth has {truth.m}")
    rhs = (kt - truth.p0) - lam * truth.eta0
    delta = cho_solve(cho_factor(_system(truth, lam)), rhs.T).T
    return truth.eta0 + delta


def penalized_error(truth: TruthSpec, eta, lam) -> float:
    """``(eta - eta0)' (lam I + V0) (eta - eta0)``, i.e. ``lam*J + V`` of the error."""
    eta = np.asarray(eta, dtype=float)
    _check_lengths(eta, truth.eta0)
    d = eta - truth.eta0
    return float(d @ _system(truth, float(lam)) @ d)


def expected_error(truth: TruthSpec, n: float, lam: float, rho: np.ndarray | None = None) -> tuple[float, float]:
    """Exact ``(bias, variance)`` parts of the expected penalised error."""
    if rho is None:
        rho = proxy_eigenvalues(truth.p0)
    A = _system(truth, lam)
    b = lam * np.linalg.solve(A, truth.eta0)
    bias = float(b @ A @ b)
    variance = float(np.sum(rho / (lam + rho)) / n)
    return bias, variance


@dataclass(frozen=True)
class RateRecord:
    n: int
    lam: float
    mc_mean: float
    mc_stderr: float
    bias: float
    variance: float
    expected: float
    bias_bound: float
    variance_bound: float
    bound: float
    ratio: float  # mc_mean / bound


@dataclass(frozen=True)
class RateReport:
    m: int
    eta0_sq: float
    rho: np.ndarray
    replications: int
    seed: int
    records: tuple[RateRecord, ...]

    @property
    def rho_sum(self) -> float:
        return float(self.rho.sum())

    def slope(self) -> float:
        """Least-squares slope of log mean error against log n."""
        n = np.array([r.n for r in self.records], dtype=float)
        e = np.array([r.mc_mean for r in self.records])
        return float(np.polyfit(np.log(n), np.log(e), 1)[0])

    def bound_constant(self) -> float:
        """Smallest ``c`` with ``mc_mean <= c * bound`` on every record."""
        return max(r.ratio for r in self.records)

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "eta0_sq": self.eta0_sq,
            "rho": self.rho.tolist(),
            "rho_sum": self.rho_sum,
            "replications": self.replications,
            "seed": self.seed,
            "slope": self.slope() if len({r.n for r in self.records}) > 1 else None,
            "bound_constant": self.bound_constant(),
            "records": [asdict(r) for r in self.records],
        }


def rate_experiment(
    truth: TruthSpec,
    n_values,
    lambda_values=None,
    replications: int = 200,
    seed: int = 0,
) -> RateReport:
    """Monte Carlo check of the error rate of the linearised estimator.

    With ``lambda_values=None`` each ``n`` is paired with
    ``lam = (m n)^{-1/2}``; otherwise every ``(n, lam)`` combination is
    run.  Each record holds the Monte Carlo mean error over multinomial
    samples, its exact expectation, and the bound
    ``lam * eta0'eta0 + 1/(n lam)``.
    """
    n_values = [int(n) for n in n_values]
    if not n_values or min(n_values) < 1:
        raise DomainError("n values must be positive integers")
    if replications < 1:
        raise DomainError("need at least one replication")
    if lambda_values is None:
        pairs = [(n, (truth.m * n) ** -0.5) for n in n_values]
    else:
        lams = [_check_lambda(x) for x in lambda_values]
        if not lams:
            raise DomainError("empty lambda grid")
        pairs = [(n, lam) for n in n_values for lam in lams]
    rho = proxy_eigenvalues(truth.p0)
    eta0_sq = float(truth.eta0 @ truth.eta0)
    ss = np.random.SeedSequence(seed)
    records = []
    for (n, lam), child in zip(pairs, ss.spawn(len(pairs))):
        rng = np.random.Generator(np.random.Philox(child))
        kt = rng.multinomial(n, truth.p0, size=replications) / n
        d = linearized_estimate(kt, truth, lam) - truth.eta0
        errs = np.einsum("ri,ij,rj->r", d, _system(truth, lam), d)
        bias, var = expected_error(truth, n, lam, rho)
        bound = lam * eta0_sq + 1.0 / (n * lam)
        mc = float(errs.mean())
        records.append(
            RateRecord(
                n=n,
                lam=float(lam),
                mc_mean=mc,
                mc_stderr=float(errs.std(ddof=1) / np.sqrt(replications)) if replications > 1 else float("nan"),
                bias=bias,
                variance=var,
                expected=bias + var,
                bias_bound=lam * eta0_sq,
                variance_bound=1.0 / (n * lam),
                bound=bound,
                ratio=mc / bound,
            )
        )
    return RateReport(truth.m, eta0_sq, rho, replications, seed, tuple(records))


def approximation_gap(k, w, lam, truth: TruthSpec, config: FitConfig | None = None) -> tuple[float, float]:
    """``(V(eta_hat - eta_tilde), V(eta_tilde - eta0))`` with ``V`` weighted by ``p0``.

    The first should be of smaller order than the second: the exact
    penalised-likelihood fit and its linearisation differ by less than the
    linearisation's own error.
    """
    k = np.asarray(k, dtype=float)
    w = as_weights(w, truth.m)
    if not np.allclose(w / w.sum(), truth.w / truth.w.sum(), rtol=1e-12, atol=0):
        raise DomainError("base measure differs from the truth's")
    fit = solve(k, w, lam, config)
    eta_t = linearized_estimate(k / k.sum(), truth, lam)
    return (
        quadratic_proxy_V(truth.p0, fit.eta_hat - eta_t),
        quadratic_proxy_V(truth.p0, eta_t - truth.eta0),
    )
