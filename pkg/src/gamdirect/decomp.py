"""Rank-revealing factorizations of the penalized working problem.

Both routes return ``K`` (n x r) and ``P`` (q x r) with

    G^-1 = P P^T,   B = P K^T,   A = K K^T,

where ``G = X^T W^2 X + S``, ``B = G^-1 X^T W`` and ``A = W X B``. ``P`` is
stored in the original column order with zero rows for columns dropped by
rank truncation, so callers never un-pivot anything.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, qr, solve_triangular

COND_LIMIT = float(np.finfo(float).eps ** -0.5)


class DecompositionError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class WorkingDecomposition:
    K: np.ndarray
    P: np.ndarray
    pivot: np.ndarray
    rank: int
    dropped: np.ndarray
    method: str
    R: np.ndarray

    @property
    def tau(self) -> float:
        return float(np.sum(self.K**2))

    def solve(self, zp) -> np.ndarray:
        """beta = B z' = P K^T z'."""
        return self.P @ (self.K.T @ zp)

    # dense views, for checks on small problems
    def G_inv(self):
        return self.P @ self.P.T

    def B(self):
        return self.P @ self.K.T

    def A(self):
        return self.K @ self.K.T


def estimate_rank(tri, cond_limit: float = COND_LIMIT) -> int:
    """Largest leading block of an upper triangular matrix with kappa_1 <= limit.

    Uses the LAPACK 1-norm condition estimator on leading blocks; the
    condition number of leading blocks is non-decreasing in the block size,
    so a bisection finds the cut.
    """
    tri = np.asarray(tri, dtype=float)
    q = tri.shape[0]
    if q == 0:
        return 0

    def ok(r):
        if r == 0:
            return True
        T = tri[:r, :r]
        d = np.abs(np.diag(T))
        if not np.all(np.isfinite(T)) or d.min() == 0:
            return False
        rcond, info = lapack.dtrcon(T, norm="1", uplo="U", diag="N")
        return info == 0 and rcond > 0 and 1.0 / rcond <= cond_limit

    if ok(q):
        return q
    lo, hi = 0, q  # ok(lo) holds, ok(hi) fails
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _column_scale(norms) -> np.ndarray:
    """Inverse column norms, so rank decisions ignore the scale of each column.

    Without this a very large smoothing parameter on one block makes the
    remaining, merely small, columns look numerically dependent.
    """
    norms = np.asarray(norms, dtype=float)
    return np.divide(1.0, norms, out=np.ones_like(norms), where=norms > 0)


def _finish(K, Rr, pivot, r, q, method, R, d):
    Rinv = solve_triangular(Rr, np.eye(r), lower=False)
    P = np.zeros((q, r))
    P[pivot[:r]] = d[pivot[:r], None] * Rinv
    return WorkingDecomposition(K, P, pivot, r, np.sort(pivot[r:]), method, R)


def factor_qr(X, w, penalties, lam, cond_limit: float = COND_LIMIT) -> WorkingDecomposition:
    """Pivoted QR of [W X; E] with E^T E = sum_j lam_j S_j."""
    X = np.asarray(X, dtype=float)
    n, q = X.shape
    WX = np.asarray(w)[:, None] * X
    rows = [WX]
    for lj, p in zip(lam, penalties):
        if p.rank and lj > 0:
            E = np.zeros((p.rank, q))
            E[:, p.cols] = np.sqrt(lj) * p.sqrt.T
            rows.append(E)
    Z = np.vstack(rows)
    d = _column_scale(np.linalg.norm(Z, axis=0))
    Q, R, piv = qr(Z * d, mode="economic", pivoting=True, check_finite=False)
    r = estimate_rank(R, cond_limit)
    return _finish(Q[:n, :r], R[:r, :r], piv, r, q, "qr", R, d)


def factor_cholesky(X, w, penalties, lam, cond_limit: float = COND_LIMIT) -> WorkingDecomposition:
    """Pivoted Cholesky L^T L = X^T W^2 X + S."""
    X = np.asarray(X, dtype=float)
    n, q = X.shape
    WX = np.asarray(w)[:, None] * X
    G = WX.T @ WX
    for lj, p in zip(lam, penalties):
        G[p.cols, p.cols] += lj * p.block
    if not np.all(np.isfinite(G)) or np.any(np.diag(G) < 0):
        raise DecompositionError("penalized Gram matrix is not positive semi-definite")
    d = _column_scale(np.sqrt(np.maximum(np.diag(G), 0.0)))
    c, piv, rank, info = lapack.dpstrf(d[:, None] * G * d, lower=0, tol=-1.0)
    if info < 0:
        raise DecompositionError(f"dpstrf failed (info={info})")
    piv = piv - 1
    L = np.triu(c)
    L[rank:, :] = 0.0
    r = estimate_rank(L[:rank, :rank], cond_limit)
    Lr = L[:r, :r]
    K = solve_triangular(Lr, (WX[:, piv[:r]] * d[piv[:r]]).T, trans="T", lower=False).T
    return _finish(K, Lr, piv, r, q, "cholesky", L, d)


def factor(X, w, penalties, lam, method: str = "qr", cond_limit: float = COND_LIMIT):
    if method == "qr":
        return factor_qr(X, w, penalties, lam, cond_limit)
    if method == "cholesky":
        return factor_cholesky(X, w, penalties, lam, cond_limit)
    raise ValueError(f"unknown factorization method {method!r}")
