import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gamdirect.decomp import (
    COND_LIMIT,
    DecompositionError,
    estimate_rank,
    factor,
    factor_cholesky,
    factor_qr,
)
from gamdirect.smooths import make_penalty
from oracles import dense_factors, frob_rel, random_instance

METHODS = ["qr", "cholesky"]


class TestEstimateRank:
    def test_identity(self):
        assert estimate_rank(np.eye(7)) == 7

    def test_tiny_diagonal(self):
        assert estimate_rank(np.diag([1.0, 1e-12]), 1e8) == 1

    def test_empty(self):
        assert estimate_rank(np.zeros((0, 0))) == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_cut_agrees_with_exact_condition_numbers(self, seed):
        rng = np.random.default_rng(seed)
        q = 12
        R = np.triu(rng.normal(size=(q, q)) * 0.1)
        np.fill_diagonal(R, np.logspace(0, -11, q))
        limit = 1e6
        r = estimate_rank(R, limit)
        kappa = [np.linalg.cond(R[:k, :k], 1) for k in range(1, q + 1)]
        # the 1-norm estimator is within a small factor of the truth
        assert kappa[r - 1] <= 10 * limit
        if r < q:
            assert kappa[r] > limit / 10


class TestExamples:
    @pytest.mark.parametrize("method", METHODS)
    def test_orthonormal_design(self, method, rng):
        X, _ = np.linalg.qr(rng.normal(size=(40, 6)))
        d = factor(X, np.ones(40), [], [], method)
        assert d.rank == 6
        np.testing.assert_allclose(d.A(), X @ X.T, atol=1e-10)
        assert d.tau == pytest.approx(6.0)

    @pytest.mark.parametrize("method", METHODS)
    def test_duplicated_column_dropped(self, method, rng):
        X = rng.normal(size=(50, 5))
        X = np.column_stack([X, X[:, 2]])
        d = factor(X, np.ones(50), [], [], method)
        assert d.rank == 5
        assert d.dropped.size == 1 and d.dropped[0] in (2, 5)
        H = X[:, :5] @ np.linalg.solve(X[:, :5].T @ X[:, :5], X[:, :5].T)
        np.testing.assert_allclose(d.A(), H, atol=1e-8)
        np.testing.assert_array_equal(d.P[d.dropped], 0.0)

    @pytest.mark.parametrize("method", METHODS)
    def test_defining_equation(self, method, rng):
        X, w, pens, lam = random_instance(rng, n=50, q=8, M=2)
        d = factor(X, w, pens, lam, method)
        G = (w[:, None] * X).T @ (w[:, None] * X) + sum(l * p.full(8) for l, p in zip(lam, pens))
        np.testing.assert_allclose(G @ d.B(), X.T * w, atol=1e-8 * np.abs(X.T * w).max())

    def test_no_penalty_is_hat_matrix(self, rng):
        X = rng.normal(size=(30, 4))
        d = factor_qr(X, np.ones(30), [make_penalty(np.eye(2), offset=1)], [0.0])
        np.testing.assert_allclose(d.A(), X @ np.linalg.pinv(X), atol=1e-10)
        np.testing.assert_allclose(d.K.T @ d.K, np.eye(4), atol=1e-10)

    def test_huge_lambda_leaves_null_space(self, rng):
        n, q = 60, 7
        X = rng.normal(size=(n, q))
        L = rng.normal(size=(5, 3))
        pen = make_penalty(L @ L.T, offset=2)
        d = factor_qr(X, np.ones(n), [pen], [1e12])
        assert d.tau == pytest.approx(q - 3, abs=1e-5)

    def test_unknown_method(self, rng):
        with pytest.raises(ValueError):
            factor(np.eye(3), np.ones(3), [], [], "svd")

    def test_indefinite_input(self):
        pen = make_penalty(np.eye(2))
        pen.block[:] = -np.eye(2) * 1e3
        with pytest.raises(DecompositionError):
            factor_cholesky(np.eye(3)[:, :2], np.ones(3), [pen], [1.0])


class TestIdentities:
    @pytest.mark.parametrize("seed", range(20))
    def test_random_instances(self, seed):
        rng = np.random.default_rng(seed)
        X, w, pens, lam = random_instance(rng)
        Ginv, B, A = dense_factors(X, w, pens, lam)
        for method, tol in (("qr", 1e-8), ("cholesky", 1e-6)):
            d = factor(X, w, pens, lam, method)
            assert d.rank == X.shape[1]
            assert frob_rel(d.G_inv(), Ginv) < tol
            assert frob_rel(d.B(), B) < tol
            assert frob_rel(d.A(), A) < tol
            assert d.tau == pytest.approx(np.sum(d.K**2))

    @pytest.mark.parametrize("seed", range(10))
    def test_methods_agree_on_trace(self, seed):
        rng = np.random.default_rng(100 + seed)
        X, w, pens, lam = random_instance(rng)
        tq = factor_qr(X, w, pens, lam).tau
        tc = factor_cholesky(X, w, pens, lam).tau
        assert tc == pytest.approx(tq, rel=1e-6)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_influence_spectrum(self, seed):
        rng = np.random.default_rng(seed)
        X, w, pens, lam = random_instance(rng, q=10, n=40)
        d = factor_qr(X, w, pens, lam)
        ev = np.linalg.eigvalsh(d.A())
        assert ev.min() > -1e-8 and ev.max() < 1 + 1e-8
        assert -1e-10 <= d.tau <= min(X.shape) + 1e-8
        kk = np.linalg.eigvalsh(d.K.T @ d.K)
        assert kk.max() < 1 + 1e-10

    def test_solve_in_original_order(self, rng):
        X, w, pens, lam = random_instance(rng, n=80, q=12, M=2)
        z = rng.normal(size=80)
        _, B, _ = dense_factors(X, w, pens, lam)
        for method in METHODS:
            d = factor(X, w, pens, lam, method)
            np.testing.assert_allclose(d.solve(w * z), B @ (w * z), rtol=1e-7, atol=1e-9)

    def test_default_condition_limit(self):
        assert COND_LIMIT == pytest.approx(6.7e7, rel=1e-2)
