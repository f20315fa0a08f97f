import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compost.domain import DomainError, kl_divergence
from compost.estimator import (
    fit_two_stage,
    solve_with_zero_collapse,
    sscomp,
    sscomp2,
    worker_count,
)
from compost.selection import LambdaGrid
from compost.solver import solve

SMALL_GRID = LambdaGrid.from_bounds(-4, 1, 0.25)


def test_uniform_counts_give_uniform_estimate():
    p, trace = sscomp([3, 3, 3, 3, 3])
    np.testing.assert_allclose(p, 0.2, atol=1e-15)
    assert trace.criterion == "cv"


def test_single_occupied_cell():
    p, _ = sscomp([5, 0, 0])
    assert np.all(p > 0)
    assert p[0] > p[1]
    assert p[1] == pytest.approx(p[2], abs=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=2, max_size=60).filter(lambda v: sum(v) > 1))
def test_estimate_is_strict_composition(k):
    p, _ = sscomp(k, grid=SMALL_GRID)
    assert np.all(p > 0)
    assert abs(p.sum() - 1) <= 1e-12


def test_estimate_errors():
    with pytest.raises(DomainError):
        sscomp([])
    with pytest.raises(DomainError):
        sscomp([2, -1, 3])
    with pytest.raises(DomainError):
        sscomp([0, 0, 0])


def test_external_prior_is_used():
    k = np.array([10.0, 0, 0, 0, 0, 2])
    prior = np.array([0.5, 0.3, 0.1, 0.04, 0.01, 0.05])
    p, _ = sscomp(k, prior)
    # the unobserved cells keep the prior's ordering
    assert p[1] > p[2] > p[3] > p[4]


def test_prior_helps_on_sparse_sample():
    # a low-count column from a spread truth, like the sparse cases of the study
    rng = np.random.default_rng(21)
    truth = np.exp(rng.normal(0, 1.5, size=100))
    truth /= truth.sum()
    near = truth * np.exp(rng.normal(0, 0.5, size=100))
    near /= near.sum()
    gains = []
    for _ in range(8):
        k = rng.multinomial(192, truth)
        p_flat, _ = sscomp(k)
        p_prior, _ = sscomp(k, near)
        gains.append(kl_divergence(truth, p_prior) < kl_divergence(truth, p_flat))
    assert np.mean(gains) >= 0.75


# ------------------------------------------------------------------ #
# zero-collapse
# ------------------------------------------------------------------ #


def test_zero_collapse_without_zeros_matches_solve():
    k = np.array([3.0, 1.0, 4.0, 1.0, 5.0])
    a = solve(k, np.ones(5), 0.05)
    b = solve_with_zero_collapse(k, np.ones(5), 0.05)
    np.testing.assert_allclose(a.eta_hat, b.eta_hat, rtol=0, atol=1e-12)


@pytest.mark.parametrize("lam", [1e-6, 1e-2, 1.0, 1e3])
def test_zero_collapse_symmetric_zeros(lam):
    fit = solve_with_zero_collapse([5, 0, 0], np.ones(3), lam)
    assert fit.eta_hat[1] == fit.eta_hat[2]
    assert fit.eta_hat.shape == (3,)


def test_zero_collapse_rejects_non_uniform_weights():
    with pytest.raises(DomainError):
        solve_with_zero_collapse([1, 0, 2], [1, 2, 3], 1.0)


def test_zero_collapse_sparse_sample_shape():
    rng = np.random.default_rng(22)
    k = np.zeros(100)
    k[rng.choice(100, 61, replace=False)] = rng.integers(1, 8, size=61)
    assert np.sum(k == 0) == 39
    for lam in (1e-6, 1e-3, 1.0):
        a = solve(k, np.ones(100), lam)
        b = solve_with_zero_collapse(k, np.ones(100), lam)
        np.testing.assert_allclose(b.eta_hat, a.eta_hat, rtol=0, atol=1e-8)


def test_auto_collapse_agrees_with_full_path():
    k = np.array([9, 0, 0, 0, 2, 0, 1, 0, 0, 3], float)
    a, ta = sscomp(k, zero_collapse=False)
    b, tb = sscomp(k, zero_collapse=True)
    c, _ = sscomp(k)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)
    np.testing.assert_array_equal(b, c)
    assert ta.chosen_index == tb.chosen_index


# ------------------------------------------------------------------ #
# two-stage
# ------------------------------------------------------------------ #


def _matrix(seed, m=20, s=4):
    rng = np.random.default_rng(seed)
    base = rng.dirichlet(np.ones(m))
    return np.column_stack([rng.multinomial(int(rng.integers(30, 120)), base) for _ in range(s)]).astype(float)


def test_identical_columns_give_identical_outputs():
    k = _matrix(23, s=1)[:, 0]
    P = sscomp2(np.column_stack([k, k, k]), grid=SMALL_GRID)
    np.testing.assert_array_equal(P[:, 0], P[:, 1])
    np.testing.assert_array_equal(P[:, 0], P[:, 2])


def test_single_column_uses_own_prior():
    k = _matrix(24, s=1)[:, 0]
    P = sscomp2(k[:, None], grid=SMALL_GRID)
    prior, _ = sscomp(k, grid=SMALL_GRID)
    direct, _ = sscomp(k, prior, grid=SMALL_GRID)
    assert P.shape == (k.size, 1)
    np.testing.assert_array_equal(P[:, 0], direct)


def test_output_is_composition_matrix():
    K = _matrix(25)
    fit = fit_two_stage(K, grid=SMALL_GRID)
    assert fit.probs.shape == K.shape
    assert np.all(fit.probs > 0)
    np.testing.assert_allclose(fit.probs.sum(axis=0), 1.0, atol=1e-12)
    assert np.all(fit.prior_kl >= 0)
    assert len(fit.traces) == K.shape[1]


def test_column_permutation_equivariance():
    K = _matrix(26)
    perm = np.array([2, 0, 3, 1])
    P = sscomp2(K, grid=SMALL_GRID)
    np.testing.assert_allclose(sscomp2(K[:, perm], grid=SMALL_GRID), P[:, perm], rtol=0, atol=1e-12)


def test_row_permutation_equivariance():
    K = _matrix(27)
    perm = np.random.default_rng(0).permutation(K.shape[0])
    P = sscomp2(K, grid=SMALL_GRID)
    np.testing.assert_allclose(sscomp2(K[perm], grid=SMALL_GRID), P[perm], rtol=0, atol=1e-8)


def test_threaded_fit_is_deterministic(monkeypatch):
    K = _matrix(28, s=6)
    serial = fit_two_stage(K, grid=SMALL_GRID, threads=1).probs
    monkeypatch.setenv("COMPOST_THREADS", "4")
    assert worker_count() == 4
    np.testing.assert_array_equal(fit_two_stage(K, grid=SMALL_GRID).probs, serial)


def test_worker_count_default(monkeypatch):
    monkeypatch.delenv("COMPOST_THREADS", raising=False)
    assert worker_count() == 1
    assert worker_count(0) == 1
    assert worker_count(3) == 3


def test_zero_column_is_named():
    K = _matrix(29)
    K[:, 2] = 0
    with pytest.raises(DomainError, match="column 2"):
        sscomp2(K)


def test_matrix_validation():
    with pytest.raises(DomainError):
        sscomp2(np.ones((2, 2, 2)))
    with pytest.raises(DomainError):
        sscomp2([[1.0, -1.0], [2.0, 3.0]])
