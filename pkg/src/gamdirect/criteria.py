"""Smoothness selection criteria (AIC, GCV, GACV) with rho-gradients and Hessians."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("aic", "gcv", "gacv")


class CriterionError(ValueError):
    pass


@dataclass
class CriterionValue:
    kind: str
    value: float
    gradient: np.ndarray
    hessian: np.ndarray
    gamma: float
    tau: float
    scale_estimate: float
    D: float = np.nan
    P: float = np.nan
    n: int = 0
    value_alt: float | None = None


def scale_estimate(stat: float, tau: float, n: int) -> float:
    """phi-hat = stat / (n - tau), stat being the Pearson statistic or deviance."""
    if tau >= n:
        raise CriterionError(f"tau={tau:.3g} >= n={n}")
    return stat / (n - tau)


def aic_value(D, tau, gamma=1.0, phi=1.0):
    return D + 2 * gamma * tau * phi


def gcv_value(D, tau, n, gamma=1.0):
    a = n - gamma * tau
    if a <= 0:
        raise CriterionError(f"gamma*tau={gamma * tau:.3g} >= n={n}")
    return n * D / a**2


def gacv_value(D, P, tau, n, gamma=1.0):
    if tau >= n:
        raise CriterionError(f"tau={tau:.3g} >= n={n}")
    return D / n + 2 * gamma * tau * P / (n * (n - tau))


def eval_aic(bundle, D, tau, gamma=1.0, phi=1.0, scale_known=True) -> CriterionValue:
    if not scale_known:
        raise CriterionError("AIC needs a family with known scale")
    g = bundle.dD + 2 * gamma * phi * bundle.dtau
    H = bundle.d2D + 2 * gamma * phi * bundle.d2tau
    return CriterionValue("aic", aic_value(D, tau, gamma, phi), g, _sym(H), gamma, tau, phi, D,
                          bundle.P)


def eval_gcv(bundle, D, tau, gamma, n) -> CriterionValue:
    V = gcv_value(D, tau, n, gamma)
    a = n - gamma * tau
    dD, dt = bundle.dD, bundle.dtau
    g = n * dD / a**2 + 2 * n * gamma * D * dt / a**3
    H = (n * bundle.d2D / a**2
         + 2 * n * gamma * (np.outer(dD, dt) + np.outer(dt, dD)) / a**3
         + 2 * n * gamma * D * bundle.d2tau / a**3
         + 6 * n * gamma**2 * D * np.outer(dt, dt) / a**4)
    return CriterionValue("gcv", V, g, _sym(H), gamma, tau, D / (n - tau), D, bundle.P, n)


def eval_gacv(bundle, D, P, tau, gamma, n) -> CriterionValue:
    V = gacv_value(D, P, tau, n, gamma)
    phi = scale_estimate(P, tau, n)
    V_alt = D / n + 2 * gamma * tau * phi / n
    h = tau / (n - tau)
    h1 = n / (n - tau) ** 2
    h2 = 2 * n / (n - tau) ** 3
    dt, dP = bundle.dtau, bundle.dP
    c = 2 * gamma / n
    g = bundle.dD / n + c * (h1 * dt * P + h * dP)
    H = bundle.d2D / n + c * (
        h2 * P * np.outer(dt, dt) + h1 * P * bundle.d2tau
        + h1 * (np.outer(dt, dP) + np.outer(dP, dt)) + h * bundle.d2P
    )
    return CriterionValue("gacv", V, g, _sym(H), gamma, tau, phi, D, P, n, V_alt)


def _sym(H):
    return 0.5 * (H + H.T)


def criterion_value(kind, D, P, tau, n, gamma=1.0, phi=1.0) -> float:
    if kind == "aic":
        return aic_value(D, tau, gamma, phi)
    if kind == "gcv":
        return gcv_value(D, tau, n, gamma)
    if kind == "gacv":
        return gacv_value(D, P, tau, n, gamma)
    raise ValueError(f"unknown criterion {kind!r}")


def evaluate(kind, bundle, n, family, gamma=1.0) -> CriterionValue:
    """Dispatch on criterion name, using the bundle's D, P and tau."""
    if kind == "aic":
        cv = eval_aic(bundle, bundle.D, bundle.tau, gamma, family.scale, family.scale_known)
        cv.n = n
        cv.scale_estimate = family.scale
        return cv
    if kind == "gcv":
        return eval_gcv(bundle, bundle.D, bundle.tau, gamma, n)
    if kind == "gacv":
        return eval_gacv(bundle, bundle.D, bundle.P, bundle.tau, gamma, n)
    raise ValueError(f"unknown criterion {kind!r}")
