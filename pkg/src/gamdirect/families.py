"""Exponential family and quasi-likelihood machinery.

Links carry derivatives up to third order and variance functions up to
second order, because the derivatives of the working weights with respect
to the linear predictor need ``g'''`` and ``V''``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit, xlogy

MU_EPS = float(np.finfo(float).eps)

LINK_KINDS = ("identity", "log", "logit", "inverse", "sqrt")
FAMILY_KINDS = ("gaussian", "binomial", "poisson", "gamma", "quasi_var_prop_mu")

_DEFAULT_LINK = {
    "gaussian": "identity",
    "binomial": "logit",
    "poisson": "log",
    "gamma": "log",
    "quasi_var_prop_mu": "log",
}


class DomainError(ValueError):
    """Raised when a mean or response lies outside the valid range."""


class LinkDerivs(NamedTuple):
    g: np.ndarray
    g1: np.ndarray
    g2: np.ndarray
    g3: np.ndarray


class VarianceDerivs(NamedTuple):
    V: np.ndarray
    V1: np.ndarray
    V2: np.ndarray


class PointwiseConstants(NamedTuple):
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    c4: np.ndarray


@dataclass(frozen=True)
class Link:
    kind: str = "identity"

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise ValueError(f"unknown link {self.kind!r}")

    def check_mu(self, mu):
        mu = np.asarray(mu, dtype=float)
        if not np.all(np.isfinite(mu)):
            raise DomainError(f"{self.kind} link: non-finite mean")
        if self.kind == "logit" and np.any((mu <= 0) | (mu >= 1)):
            raise DomainError("logit link requires 0 < mu < 1")
        if self.kind in ("log", "inverse", "sqrt") and np.any(mu <= 0):
            raise DomainError(f"{self.kind} link requires mu > 0")
        return mu

    def eval(self, mu) -> LinkDerivs:
        """g(mu) and its first three derivatives, elementwise."""
        mu = self.check_mu(mu)
        one = np.ones_like(mu)
        zero = np.zeros_like(mu)
        if self.kind == "identity":
            return LinkDerivs(mu.copy(), one, zero, zero)
        if self.kind == "log":
            return LinkDerivs(np.log(mu), 1 / mu, -1 / mu**2, 2 / mu**3)
        if self.kind == "logit":
            a = mu * (1 - mu)
            return LinkDerivs(
                np.log(mu / (1 - mu)),
                1 / a,
                (2 * mu - 1) / a**2,
                2 * (1 - 3 * mu + 3 * mu**2) / a**3,
            )
        if self.kind == "inverse":
            return LinkDerivs(1 / mu, -1 / mu**2, 2 / mu**3, -6 / mu**4)
        # sqrt
        return LinkDerivs(
            np.sqrt(mu), 0.5 * mu**-0.5, -0.25 * mu**-1.5, 0.375 * mu**-2.5
        )

    def linkfun(self, mu):
        return self.eval(mu).g

    def linkinv(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.kind == "identity":
            return eta.copy()
        if self.kind == "log":
            return np.exp(np.minimum(eta, 700.0))
        if self.kind == "logit":
            return expit(eta)
        if self.kind == "inverse":
            return 1 / eta
        return eta**2

    def valid_eta(self, eta) -> bool:
        eta = np.asarray(eta)
        if not np.all(np.isfinite(eta)):
            return False
        if self.kind in ("inverse", "sqrt"):
            return bool(np.all(eta > 0))
        return True


def link_eval(link: Link, mu) -> LinkDerivs:
    return link.eval(mu)


@dataclass(frozen=True)
class Family:
    """Response distribution (or quasi mean-variance relation).

    ``scale`` is the known dispersion when ``scale_known`` is true and is
    ignored otherwise. Binomial and Poisson always have known scale 1 and
    the quasi family never has known scale.
    """

    kind: str = "gaussian"
    scale_known: bool | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise ValueError(f"unknown family {self.kind!r}")
        known = self.scale_known
        if self.kind in ("binomial", "poisson"):
            if known is False:
                raise ValueError(f"{self.kind} family has known scale")
            object.__setattr__(self, "scale_known", True)
            object.__setattr__(self, "scale", 1.0)
        elif self.kind == "quasi_var_prop_mu":
            if known:
                raise ValueError("quasi family has unknown scale")
            object.__setattr__(self, "scale_known", False)
        elif known is None:
            object.__setattr__(self, "scale_known", False)
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def default_link(self) -> Link:
        return Link(_DEFAULT_LINK[self.kind])

    def check_mu(self, mu):
        mu = np.asarray(mu, dtype=float)
        if not np.all(np.isfinite(mu)):
            raise DomainError(f"{self.kind}: non-finite mean")
        if self.kind == "binomial" and np.any((mu <= 0) | (mu >= 1)):
            raise DomainError("binomial mean must lie in (0, 1)")
        if self.kind in ("poisson", "gamma", "quasi_var_prop_mu") and np.any(mu <= 0):
            raise DomainError(f"{self.kind} mean must be positive")
        return mu

    def check_y(self, y):
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise DomainError("response contains non-finite values")
        if self.kind == "binomial" and np.any((y < 0) | (y > 1)):
            raise DomainError("binomial response must lie in [0, 1]")
        if self.kind in ("poisson", "quasi_var_prop_mu") and np.any(y < 0):
            raise DomainError(f"{self.kind} response must be non-negative")
        if self.kind == "gamma" and np.any(y <= 0):
            raise DomainError("gamma response must be positive")
        return y

    def clip_mu(self, mu):
        """Keep means strictly inside the valid range before differentiating."""
        mu = np.asarray(mu, dtype=float)
        if self.kind == "binomial":
            return np.clip(mu, MU_EPS, 1 - MU_EPS)
        if self.kind in ("poisson", "gamma", "quasi_var_prop_mu"):
            return np.maximum(mu, MU_EPS)
        return mu

    def variance(self, mu) -> VarianceDerivs:
        mu = self.check_mu(mu)
        one = np.ones_like(mu)
        zero = np.zeros_like(mu)
        if self.kind == "gaussian":
            return VarianceDerivs(one, zero, zero)
        if self.kind == "binomial":
            return VarianceDerivs(mu * (1 - mu), 1 - 2 * mu, -2 * one)
        if self.kind in ("poisson", "quasi_var_prop_mu"):
            return VarianceDerivs(mu.copy(), one, zero)
        return VarianceDerivs(mu**2, 2 * mu, 2 * one)

    def dev_resids(self, y, mu, omega=None):
        """Per-datum deviance contributions D_i."""
        y = self.check_y(y)
        mu = self.check_mu(mu)
        omega = _weights(omega, y)
        if self.kind == "gaussian":
            d = (y - mu) ** 2
        elif self.kind == "binomial":
            d = 2 * (xlogy(y, y) - xlogy(y, mu) + xlogy(1 - y, 1 - y) - xlogy(1 - y, 1 - mu))
        elif self.kind in ("poisson", "quasi_var_prop_mu"):
            d = 2 * (xlogy(y, y) - xlogy(y, mu) - (y - mu))
        else:
            d = 2 * (-np.log(y / mu) + (y - mu) / mu)
        return omega * np.maximum(d, 0.0)

    def initialize_mu(self, y):
        return initialize_mu(self, y)


def _weights(omega, y):
    if omega is None:
        return np.ones_like(np.asarray(y, dtype=float))
    omega = np.asarray(omega, dtype=float)
    if omega.shape != np.shape(y):
        raise ValueError("prior weights and response differ in length")
    if np.any(omega < 0):
        raise ValueError("prior weights must be non-negative")
    return omega


def variance_eval(family: Family, mu) -> VarianceDerivs:
    return family.variance(mu)


def deviance(family: Family, y, mu, omega=None):
    """Total deviance and its per-datum contributions."""
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if y.shape != mu.shape:
        raise ValueError("y and mu differ in length")
    di = family.dev_resids(y, mu, omega)
    return float(di.sum()), di


def initialize_mu(family: Family, y):
    """Starting means, strictly interior to the valid range."""
    y = family.check_y(y)
    if family.kind == "binomial":
        return (y + 0.5) / 2
    if family.kind in ("poisson", "quasi_var_prop_mu"):
        return np.maximum(y, 0.1)
    return y.copy()


def deviance_beta_derivs(family: Family, link: Link, y, mu, omega, X):
    """Gradient of D w.r.t. beta and the diagonal of its Hessian weights.

    The Hessian is ``X.T @ (e[:, None] * X)``; callers form it lazily.
    """
    y = np.asarray(y, dtype=float)
    omega = _weights(omega, y)
    lk = link.eval(mu)
    vr = family.variance(mu)
    c = -2 * omega * (y - mu) / (vr.V * lk.g1)
    e = 2 * omega * (
        1 / (vr.V * lk.g1**2)
        + (y - mu) * (vr.V1 * lk.g1 + vr.V * lk.g2) / (vr.V**2 * lk.g1**3)
    )
    return np.asarray(X).T @ c, e


def deviance_eta_gradient(family: Family, link: Link, y, mu, omega=None):
    """dD_i/d eta_i, the vector c with grad_beta D = X.T c."""
    omega = _weights(omega, y)
    lk = link.eval(mu)
    V = family.variance(mu).V
    return -2 * omega * (np.asarray(y) - mu) / (V * lk.g1)


def pearson_stat(w, z, eta) -> float:
    """Pearson statistic from working weights, pseudodata and predictor."""
    w, z, eta = (np.asarray(a, dtype=float) for a in (w, z, eta))
    if not (w.shape == z.shape == eta.shape):
        raise ValueError("w, z and eta differ in length")
    return float(np.sum(w**2 * (z - eta) ** 2))


def pearson_direct(family: Family, y, mu, omega=None) -> float:
    y = np.asarray(y, dtype=float)
    omega = _weights(omega, y)
    return float(np.sum(omega * (y - mu) ** 2 / family.variance(mu).V))


def working_weights(family: Family, link: Link, mu, omega=None):
    omega = _weights(omega, mu)
    return np.sqrt(omega / family.variance(mu).V) / link.eval(mu).g1


def irls_derivative_constants(family: Family, link: Link, y, mu, w, omega=None):
    """Pointwise constants linking d(z, w)/d eta to the linear predictor.

    ``dz/deta = c1``, ``d2z/deta2 = c2``, ``dw/deta = -c3`` and
    ``d2w/deta2 = 3 c3**2 / w - c4``.
    """
    y = np.asarray(y, dtype=float)
    omega = _weights(omega, y)
    w = np.asarray(w, dtype=float)
    lk = link.eval(mu)
    vr = family.variance(mu)
    g1, g2, g3 = lk.g1, lk.g2, lk.g3
    r = y - mu
    c1 = r * g2 / g1
    c2 = r * (g3 / g1**2 - g2**2 / g1**3) - g2 / g1**2
    # w**3 / omega written as omega**0.5 V**-1.5 / g1**3 so zero weights stay finite
    w3_om = np.sqrt(omega) * vr.V**-1.5 / g1**3
    c3 = w3_om * (vr.V1 * g1 + 2 * vr.V * g2) / 2
    c4 = w3_om * (vr.V2 * g1 + 2 * g3 * vr.V + 3 * g2 * vr.V1) / (2 * g1)
    return PointwiseConstants(c1, c2, c3, c4)


_FAMILY_ALIASES = {"quasi": "quasi_var_prop_mu", "binary": "binomial"}


def make_family(name: str, link: str | None = None, scale: float | None = None):
    """Build a (Family, Link) pair from names; ``scale`` marks it known."""
    name = _FAMILY_ALIASES.get(name, name)
    if scale is None:
        fam = Family(name)
    else:
        fam = Family(name, scale_known=True, scale=float(scale))
    lk = Link(link) if link else fam.default_link
    if fam.kind == "quasi_var_prop_mu" and lk.kind != "log":
        raise ValueError("quasi family is only supported with the log link")
    return fam, lk
