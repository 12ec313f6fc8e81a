"""Derivatives of beta-hat, the deviance, the Pearson statistic and tr(A)
with respect to the log smoothing parameters.

At a converged P-IRLS state the working weights, pseudodata and the K, P
factors are frozen, and the implicit derivative system for beta-hat is
iterated to its fixed point.  Every product with B, dB/drho or d2B/drho2 is
evaluated as a chain of matrix-vector products through K and P, so the cost
of one application is O(nr) after the O(nr^2) set-up.

Notation: ``t[k]`` is the diagonal of ``T_k = diag(dw/drho_k / w)`` and
``tkm[p]`` the diagonal of ``T_km`` for the p-th pair ``(k, m)``, k >= m.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .families import deviance_beta_derivs, deviance_eta_gradient, irls_derivative_constants
from .pirls import PirlsState


class DerivativeError(RuntimeError):
    pass


def pair_list(M: int) -> list[tuple[int, int]]:
    return [(k, m) for k in range(M) for m in range(k + 1)]


def sym_from_pairs(vals, M: int) -> np.ndarray:
    H = np.zeros((M, M))
    for (k, m), v in zip(pair_list(M), vals):
        H[k, m] = H[m, k] = v
    return H


def _penalty_PtR(P, pen) -> np.ndarray:
    """P^T sqrt(S_j), r x rank_j."""
    return P[pen.cols].T @ pen.sqrt


class BOps:
    """Products with B and its rho-derivatives through the K, P factors."""

    def __init__(self, decomp, penalties, lam):
        self.K = decomp.K
        self.P = decomp.P
        self.lam = np.asarray(lam, dtype=float)
        PtR = [_penalty_PtR(self.P, p) for p in penalties]
        self.PSP = [R @ R.T for R in PtR]
        self.PtR = PtR

    def KT(self, x):
        return self.K.T @ x

    def B(self, v):
        return self.P @ (self.K.T @ v)

    def _dB_r(self, k, tk, v, a=None, Ka=None):
        K = self.K
        if a is None:
            a = K.T @ v
            Ka = K @ a
        out = -self.lam[k] * (self.PSP[k] @ a)
        if tk is not None:
            out += -2 * (K.T @ (tk * Ka)) + K.T @ (tk * v)
        return out

    def dB(self, k, tk, v):
        """(dB/drho_k) v = -2 B T_k A v - lam_k G^-1 S_k B v + B T_k v."""
        return self.P @ self._dB_r(k, tk, v)

    def d2B(self, k, m, tk, tm, tkm, v):
        """(d2B/drho_k drho_m) v, all terms as right-to-left products."""
        K, PSP, lk, lm = self.K, self.PSP, self.lam[k], self.lam[m]
        a = K.T @ v
        Ka = K @ a
        Sk_a = PSP[k] @ a
        Sm_a = PSP[m] @ a
        out = lk * lm * (PSP[m] @ Sk_a + PSP[k] @ Sm_a)
        if k == m:
            out -= lk * Sk_a
        if tk is not None:
            KT = K.T
            tkKa = KT @ (tk * Ka)
            tmKa = KT @ (tm * Ka)
            out += (
                4 * KT @ (tm * (K @ tkKa))
                + 2 * lm * (PSP[m] @ tkKa)
                - 4 * KT @ (tm * tk * Ka)
                - 2 * KT @ (tkm * Ka)
                + 4 * KT @ (tk * (K @ tmKa))
                + 2 * lm * KT @ (tk * (K @ Sm_a))
                - 2 * KT @ (tk * (K @ (KT @ (tm * v))))
                - 2 * KT @ (tm * (K @ (KT @ (tk * v))))
                - lm * (PSP[m] @ (KT @ (tk * v)))
                + KT @ (tm * tk * v)
                + KT @ (tkm * v)
                + 2 * lk * KT @ (tm * (K @ Sk_a))
                + 2 * lk * (PSP[k] @ tmKa)
                - lk * (PSP[k] @ (KT @ (tm * v)))
            )
        return self.P @ out


def apply_dB(decomp, tk, rho_k, pen, v):
    """(dB/drho_k) v for a single penalty; ``tk=None`` means T_k = 0."""
    ops = BOps(decomp, [pen], [np.exp(rho_k)])
    return ops.dB(0, tk, np.asarray(v, dtype=float))


def apply_d2B(decomp, tk, tm, tkm, rho_k, rho_m, pen_k, pen_m, v, same=False):
    """(d2B/drho_k drho_m) v; ``same`` flags k == m (pen_k is pen_m)."""
    if same:
        ops = BOps(decomp, [pen_k], [np.exp(rho_k)])
        return ops.d2B(0, 0, tk, tm, tkm, np.asarray(v, dtype=float))
    ops = BOps(decomp, [pen_k, pen_m], [np.exp(rho_k), np.exp(rho_m)])
    return ops.d2B(1, 0, tk, tm, tkm, np.asarray(v, dtype=float))


# ---------------------------------------------------------------------------
# trace derivatives


class TraceTerms:
    """Stored products used by the tr(A) derivatives.

    The most expensive parts are the M products K^T T_k K.
    """

    def __init__(self, decomp, penalties, lam):
        K, P = decomp.K, decomp.P
        self.lam = np.asarray(lam, dtype=float)
        self.K = K
        self.diagA = np.einsum("ij,ij->i", K, K)
        self.KtK = K.T @ K
        KKtK = K @ self.KtK
        self.diagAA = np.einsum("ij,ij->i", KKtK, K)
        PtR = [_penalty_PtR(P, p) for p in penalties]
        KPR = [K @ R for R in PtR]
        self.d_BSB = [np.einsum("ij,ij->i", X, X) for X in KPR]
        self.d_ABSB = [np.einsum("ij,ij->i", KKtK @ R, X) for R, X in zip(PtR, KPR)]
        self.PSP = [R @ R.T for R in PtR]
        self.PSPKK = [S @ self.KtK for S in self.PSP]
        self.tr_BSB = np.array([d.sum() for d in self.d_BSB])

    def first(self, t=None) -> np.ndarray:
        """d tau / d rho_k."""
        out = -self.lam * self.tr_BSB
        if t is not None:
            for k in range(len(self.lam)):
                out[k] += 2 * t[k] @ self.diagA - 2 * t[k] @ self.diagAA
        return out

    def second(self, t=None, tkm=None) -> np.ndarray:
        M = len(self.lam)
        lam = self.lam
        pairs = pair_list(M)
        vals = np.zeros(len(pairs))
        if t is not None:
            KtTK = [self.K.T @ (tk[:, None] * self.K) for tk in t]
            KtTKKtK = [X @ self.KtK for X in KtTK]
        for p, (k, m) in enumerate(pairs):
            v = 2 * lam[m] * lam[k] * np.sum(self.PSP[m] * self.PSPKK[k].T)
            if k == m:
                v -= lam[k] * self.tr_BSB[k]
            if t is not None:
                tk, tm, tt = t[k], t[m], tkm[p]
                v += (
                    2 * tt @ self.diagA
                    + 4 * (tk * tm) @ self.diagA
                    - 8 * np.sum(KtTK[k] * KtTK[m])
                    - 4 * (tk * tm) @ self.diagAA
                    - 2 * tt @ self.diagAA
                    + 8 * np.sum(KtTK[k] * KtTKKtK[m].T)
                    + 4 * lam[m] * tk @ self.d_ABSB[m]
                    + 4 * lam[k] * tm @ self.d_ABSB[k]
                    - 2 * lam[m] * tk @ self.d_BSB[m]
                    - 2 * lam[k] * tm @ self.d_BSB[k]
                )
            vals[p] = v
        return sym_from_pairs(vals, M)


def trA_first_derivs(decomp, t, rho, penalties) -> np.ndarray:
    return TraceTerms(decomp, penalties, np.exp(rho)).first(t)


def trA_second_derivs(decomp, t, tkm, rho, penalties) -> np.ndarray:
    return TraceTerms(decomp, penalties, np.exp(rho)).second(t, tkm)


# ---------------------------------------------------------------------------
# the derivative iteration


@dataclass
class DerivConfig:
    tol: float = 1e-7
    max_iter: int = 50


@dataclass
class DerivativeBundle:
    dbeta: np.ndarray
    d2beta: np.ndarray
    dD: np.ndarray
    d2D: np.ndarray
    dP: np.ndarray
    d2P: np.ndarray
    dtau: np.ndarray
    d2tau: np.ndarray
    D: float
    P: float
    tau: float
    deta: np.ndarray
    d2eta: np.ndarray
    dz: np.ndarray
    d2z: np.ndarray
    dw: np.ndarray
    d2w: np.ndarray
    t: np.ndarray
    tkm: np.ndarray
    iterations: int
    converged: bool
    pairs: list = field(default_factory=list)


def _safe_div(a, b):
    out = np.zeros(np.broadcast(a, b).shape)
    nz = b != 0
    np.divide(a, b, out=out, where=np.broadcast_to(nz, out.shape))
    return out


class _WorkingDerivs:
    """Derivatives of eta, z, w, z' and the T matrices given beta-hat derivatives."""

    def __init__(self, state, model):
        self.X = model.X
        self.w = state.w
        self.z = state.z
        self.cs = irls_derivative_constants(model.family, model.link, model.y,
                                            state.mu, state.w, model.weights)
        self.trivial = all(not np.any(c) for c in self.cs)

    def __call__(self, dbeta, d2beta, pairs):
        c1, c2, c3, c4 = self.cs
        w, z = self.w, self.z
        deta = self.X @ dbeta
        d2eta = self.X @ d2beta
        ki = [k for k, _ in pairs]
        mi = [m for _, m in pairs]
        ee = deta[:, ki] * deta[:, mi]
        dz = c1[:, None] * deta
        d2z = c1[:, None] * d2eta + c2[:, None] * ee
        dw = -c3[:, None] * deta
        ww = dw[:, ki] * dw[:, mi]
        d2w = 3 * _safe_div(ww, w[:, None]) - c3[:, None] * d2eta - c4[:, None] * ee
        dzp = dw * z[:, None] + w[:, None] * dz
        d2zp = (d2w * z[:, None] + dw[:, ki] * dz[:, mi] + dw[:, mi] * dz[:, ki]
                + w[:, None] * d2z)
        t = _safe_div(dw, w[:, None])
        tkm = _safe_div(d2w, w[:, None]) - _safe_div(ww, (w**2)[:, None])
        return dict(deta=deta, d2eta=d2eta, dz=dz, d2z=d2z, dw=dw, d2w=d2w,
                    dzp=dzp, d2zp=d2zp, t=t, tkm=tkm)


def deviance_rho_derivs(c_dev, e_dev, deta, d2eta, pairs, M):
    """First and second rho-derivatives of D via the beta chain rule."""
    dD = c_dev @ deta
    vals = np.array([deta[:, k] @ (e_dev * deta[:, m]) for k, m in pairs]) + c_dev @ d2eta
    return dD, sym_from_pairs(vals, M)


def pearson_rho_derivs(w, r, dw, d2w, dr, d2r, pairs, M):
    """Derivatives of P = sum w^2 r^2 with r = z - X beta."""
    dP = (2 * w * r**2) @ dw + (2 * w**2 * r) @ dr
    vals = np.empty(len(pairs))
    for p, (k, m) in enumerate(pairs):
        vals[p] = np.sum(
            2 * dw[:, m] * dw[:, k] * r**2
            + 2 * w * d2w[:, p] * r**2
            + 4 * w * dw[:, k] * r * dr[:, m]
            + 4 * w * dw[:, m] * r * dr[:, k]
            + 2 * w**2 * dr[:, m] * dr[:, k]
            + 2 * w**2 * r * d2r[:, p]
        )
    return dP, sym_from_pairs(vals, M)


def derivative_iteration(state: PirlsState, model, config: DerivConfig | None = None,
                         raise_on_fail: bool = True) -> DerivativeBundle:
    """Iterate the beta-hat derivative system at a converged fit."""
    cfg = config or DerivConfig()
    M = model.M
    pairs = pair_list(M)
    lam = np.exp(state.rho)
    ops = BOps(state.decomp, model.penalties, lam)
    wd = _WorkingDerivs(state, model)
    zp = state.zprime
    c_dev, e_dev = _deviance_weights(state, model)

    def update(t=None, tkm=None, dzp=None, d2zp=None):
        dbeta = np.column_stack([ops.dB(k, None if t is None else t[:, k], zp)
                                 for k in range(M)]) if M else np.zeros((model.q, 0))
        d2beta = np.zeros((model.q, len(pairs)))
        for p, (k, m) in enumerate(pairs):
            if t is None:
                d2beta[:, p] = ops.d2B(k, m, None, None, None, zp)
            else:
                d2beta[:, p] = ops.d2B(k, m, t[:, k], t[:, m], tkm[:, p], zp)
        if dzp is not None:
            dbeta += ops.P @ (ops.K.T @ dzp)
            for p, (k, m) in enumerate(pairs):
                d2beta[:, p] += (ops.dB(k, t[:, k], dzp[:, m]) + ops.dB(m, t[:, m], dzp[:, k])
                                 + ops.B(d2zp[:, p]))
        return dbeta, d2beta

    dbeta, d2beta = update()
    cur = wd(dbeta, d2beta, pairs)
    dD, d2D = deviance_rho_derivs(c_dev, e_dev, cur["deta"], cur["d2eta"], pairs, M)
    it = 1
    converged = wd.trivial
    while not converged and it < cfg.max_iter:
        dbeta, d2beta = update(cur["t"], cur["tkm"], cur["dzp"], cur["d2zp"])
        cur = wd(dbeta, d2beta, pairs)
        dD_new, d2D_new = deviance_rho_derivs(c_dev, e_dev, cur["deta"], cur["d2eta"], pairs, M)
        it += 1
        change = max(_maxabs(dD_new - dD), _maxabs(d2D_new - d2D))
        scale = max(_maxabs(dD_new), _maxabs(d2D_new))
        converged = change <= cfg.tol * scale or change <= 1e-13 * (abs(state.deviance) + 1)
        dD, d2D = dD_new, d2D_new
    if not converged and raise_on_fail:
        raise DerivativeError(f"derivative iteration did not converge in {cfg.max_iter} passes")

    t, tkm = cur["t"], cur["tkm"]
    tt = None if wd.trivial else t.T
    tr = TraceTerms(state.decomp, model.penalties, lam)
    dtau = tr.first(tt)
    d2tau = tr.second(tt, None if wd.trivial else tkm.T)

    r = state.z - (model.X @ state.beta)
    dr = cur["dz"] - cur["deta"]
    d2r = cur["d2z"] - cur["d2eta"]
    dP, d2P = pearson_rho_derivs(state.w, r, cur["dw"], cur["d2w"], dr, d2r, pairs, M)
    return DerivativeBundle(
        dbeta, d2beta, dD, d2D, dP, d2P, dtau, d2tau,
        state.deviance, float(np.sum(state.w**2 * r**2)), state.tau,
        cur["deta"], cur["d2eta"], cur["dz"], cur["d2z"], cur["dw"], cur["d2w"],
        t, tkm, it, converged, pairs,
    )


def _maxabs(a) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def _deviance_weights(state, model):
    """c (dD/deta) and e (d2D/deta2) at the fitted means."""
    fam, link = model.family, model.link
    om = model.weights
    _, e = deviance_beta_derivs(fam, link, model.y, state.mu, om, np.zeros((model.n, 0)))
    c = deviance_eta_gradient(fam, link, model.y, state.mu, om)
    return c, e
