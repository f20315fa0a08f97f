"""Value checks and loss functionals shared across the package.

Counts, base-measure weights, log-density coordinates and compositions are
all carried as 1-d float64 numpy arrays.  The ``as_*`` helpers validate an
array-like and return a read-only copy, so anything that passes through them
can be shared freely between threads.
"""

from __future__ import annotations

import numpy as np
from scipy.special import logsumexp

CENTER_TOL = 1e-8
SUM_TOL = 1e-10


class DomainError(ValueError):
    """Invalid counts, weights or probability vectors."""


def _vector(x, name: str) -> np.ndarray:
    arr = np.array(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DomainError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < 1:
        raise DomainError(f"{name} must have at least one entry")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite values")
    arr.flags.writeable = False
    return arr


def as_counts(k, *, require_total: bool = True) -> np.ndarray:
    """Validate a count vector.

    Entries are non-negative reals; they need not be integers.
    """
    arr = _vector(k, "counts")
    if np.any(arr < 0):
        raise DomainError(f"counts must be non-negative (cell {int(np.argmin(arr))})")
    if require_total and arr.sum() <= 0:
        raise DomainError("counts have zero total")
    return arr


def as_weights(w, m: int | None = None) -> np.ndarray:
    """Validate a base measure: strictly positive weights of length ``m``."""
    arr = _vector(w, "weights")
    if m is not None and arr.size != m:
        raise DomainError(f"weights have length {arr.size}, expected {m}")
    if np.any(arr <= 0):
        raise DomainError(f"weights must be strictly positive (cell {int(np.argmin(arr))})")
    return arr


def as_composition(p, m: int | None = None) -> np.ndarray:
    """Validate a composition: strictly positive entries summing to one."""
    arr = _vector(p, "composition")
    if m is not None and arr.size != m:
        raise DomainError(f"composition has length {arr.size}, expected {m}")
    if np.any(arr <= 0):
        raise DomainError("composition entries must be strictly positive")
    if abs(arr.sum() - 1.0) > SUM_TOL:
        raise DomainError(f"composition sums to {arr.sum()!r}, not 1")
    return arr


def uniform_weights(m: int) -> np.ndarray:
    w = np.ones(m)
    w.flags.writeable = False
    return w


def center(eta) -> np.ndarray:
    eta = np.asarray(eta, dtype=np.float64)
    return eta - eta.mean()


def is_centered(eta, tol: float = CENTER_TOL) -> bool:
    return abs(float(np.sum(eta))) <= tol


def _check_lengths(*arrays: np.ndarray) -> None:
    sizes = {a.size for a in arrays}
    if len(sizes) != 1:
        raise DomainError(f"length mismatch: {sorted(sizes)}")


def to_composition(eta, w) -> np.ndarray:
    """Map log-density coordinates to probabilities relative to ``w``.

    ``p_y = w_y exp(eta_y) / sum_x w_x exp(eta_x)``, evaluated on the log
    scale with the maximum subtracted, so ``eta`` of size +-700 is fine.
    """
    eta = _vector(eta, "eta")
    w = as_weights(w)
    _check_lengths(eta, w)
    a = np.log(w) + eta
    p = np.exp(a - logsumexp(a))
    # renormalise once more: exp of shifted logs can be off by a few ulps
    p /= p.sum()
    if np.any(p <= 0):
        raise DomainError("composition underflowed to zero; eta range too wide")
    p.flags.writeable = False
    return p


def kl_divergence(p, q) -> float:
    """Kullback-Leibler divergence ``sum_y p_y log(p_y / q_y)``.

    Both arguments must be strictly positive; zero entries of ``p`` are
    rejected rather than treated as ``0 log 0``.
    """
    p = _vector(p, "p")
    q = _vector(q, "q")
    _check_lengths(p, q)
    if np.any(p <= 0) or np.any(q <= 0):
        raise DomainError("kl_divergence needs strictly positive arguments")
    return max(float(np.sum(p * (np.log(p) - np.log(q)))), 0.0)


def quadratic_proxy_V(p0, d) -> float:
    """Weighted mean-square error of ``d`` under weights ``p0``.

    Returns ``d' (P0 - p0 p0') d = sum p0 d^2 - (sum p0 d)^2``, the quadratic
    approximation of the symmetrised KL divergence between ``p0`` and the
    composition whose log-density differs from that of ``p0`` by ``d``.
    Adding a constant to ``d`` leaves the value unchanged.
    """
    p0 = _vector(p0, "p0")
    d = _vector(d, "d")
    _check_lengths(p0, d)
    # centring d under p0 first keeps the two terms from cancelling
    dc = d - np.dot(p0, d) / p0.sum()
    return max(float(np.dot(p0, dc * dc) - np.dot(p0, dc) ** 2), 0.0)


def empirical_composition(k) -> np.ndarray:
    """Raw proportions ``k / n``; may contain zeros."""
    k = as_counts(k)
    out = k / k.sum()
    out.flags.writeable = False
    return out
