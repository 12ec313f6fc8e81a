"""Finite-difference checks of the analytic rho-derivatives.

Every FD value comes from full P-IRLS refits at perturbed rho, so the check
is independent of the derivative iteration.  Gradients use central first
differences; Hessians use central second differences of the refit values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import criteria
from .derivs import derivative_iteration
from .families import pearson_direct
from .optimizer import choose_criterion
from .pirls import PirlsConfig, pirls_fit

TIGHT_PIRLS = PirlsConfig(tol=1e-14, beta_tol=1e-12, max_iter=400)


@dataclass
class CheckRow:
    quantity: str
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: float
    threshold: float

    @property
    def ok(self) -> bool:
        return bool(self.rel_error < self.threshold)


@dataclass
class DerivCheck:
    rho: np.ndarray
    criterion: str
    rows: list[CheckRow] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.ok for r in self.rows)

    def row(self, name: str) -> CheckRow:
        return next(r for r in self.rows if r.quantity == name)

    def table(self) -> str:
        lines = [f"{'quantity':<10}{'max|analytic|':>16}{'max|fd|':>14}{'rel.err':>12}"
                 f"{'limit':>10}  status"]
        for r in self.rows:
            lines.append(f"{r.quantity:<10}{np.max(np.abs(r.analytic)):>16.6g}"
                         f"{np.max(np.abs(r.numeric)):>14.6g}{r.rel_error:>12.3e}"
                         f"{r.threshold:>10.1e}  {'ok' if r.ok else 'FAIL'}")
        return "\n".join(lines) + "\n"


def rel_error(analytic, numeric) -> float:
    """Norm-wise relative error max|a - f| / max|f| (absolute if f is zero)."""
    a = np.asarray(analytic, dtype=float)
    f = np.asarray(numeric, dtype=float)
    scale = np.max(np.abs(f))
    diff = np.max(np.abs(a - f)) if a.size else 0.0
    return float(diff / scale) if scale > 0 else float(diff)


def _stats(model, rho, cfg, beta0=None):
    st = pirls_fit(model, rho, cfg, beta0)
    P = pearson_direct(model.family, model.y, st.mu, model.weights)
    return np.array([st.deviance, P, st.tau]), st


def _criterion(kind, stats, model, gamma):
    phi = model.family.scale if model.family.scale_known else 1.0
    D, P, tau = stats
    return criteria.criterion_value(kind, D, P, tau, model.n, gamma, phi)


def check_derivatives(model, rho, criterion=None, gamma: float = 1.0,
                      h: float = 1e-4, h2: float = 1e-3, first_tol: float = 1e-4,
                      second_tol: float = 1e-3, pirls_config: PirlsConfig | None = None
                      ) -> DerivCheck:
    """Compare analytic derivatives of D, P, tau and criteria with FD.

    ``criterion`` is one kind or a sequence of kinds; with several, the
    criterion rows are labelled ``dV:<kind>`` and share the same refits.
    """
    kinds = [criterion] if criterion is None or isinstance(criterion, str) else list(criterion)
    kinds = [choose_criterion(model.family, k) for k in kinds]
    cfg = pirls_config or TIGHT_PIRLS
    rho = np.asarray(rho, dtype=float)
    M = rho.size
    f0, st = _stats(model, rho, cfg)
    bundle = derivative_iteration(st, model)

    cache = {}

    def f(r):
        key = tuple(np.round(r, 14))
        if key not in cache:
            cache[key] = _stats(model, r, cfg, st.beta)[0]
        return cache[key]

    E = np.eye(M)
    grad = np.array([(f(rho + h * E[k]) - f(rho - h * E[k])) / (2 * h) for k in range(M)]).T
    hess = np.zeros((3, M, M))
    vgrad = {k: np.zeros(M) for k in kinds}
    vhess = {k: np.zeros((M, M)) for k in kinds}
    v0 = {k: _criterion(k, f0, model, gamma) for k in kinds}

    def V(kind, r):
        return _criterion(kind, f(r), model, gamma)

    for k in range(M):
        plus, minus = rho + h2 * E[k], rho - h2 * E[k]
        hess[:, k, k] = (f(plus) - 2 * f0 + f(minus)) / h2**2
        for kind in kinds:
            vgrad[kind][k] = (V(kind, rho + h * E[k]) - V(kind, rho - h * E[k])) / (2 * h)
            vhess[kind][k, k] = (V(kind, plus) - 2 * v0[kind] + V(kind, minus)) / h2**2
        for m in range(k):
            pts = [rho + h2 * (E[k] + E[m]), rho + h2 * (E[k] - E[m]),
                   rho + h2 * (E[m] - E[k]), rho - h2 * (E[k] + E[m])]
            vals = [f(p) for p in pts]
            hess[:, k, m] = hess[:, m, k] = (vals[0] - vals[1] - vals[2] + vals[3]) / (4 * h2**2)
            for kind in kinds:
                vv = [V(kind, p) for p in pts]
                vhess[kind][k, m] = vhess[kind][m, k] = (vv[0] - vv[1] - vv[2] + vv[3]) / (4 * h2**2)

    out = DerivCheck(rho, kinds[0] if len(kinds) == 1 else ",".join(kinds))
    names = ("D", "P", "tau")
    first = [bundle.dD, bundle.dP, bundle.dtau]
    second = [bundle.d2D, bundle.d2P, bundle.d2tau]
    cvs = {k: criteria.evaluate(k, bundle, model.n, model.family, gamma) for k in kinds}
    vlabel = {k: "V" if len(kinds) == 1 else f"V:{k}" for k in kinds}
    for i, name in enumerate(names):
        out.rows.append(CheckRow(f"d{name}", first[i], grad[i], rel_error(first[i], grad[i]),
                                 first_tol))
    for k in kinds:
        out.rows.append(CheckRow(f"d{vlabel[k]}", cvs[k].gradient, vgrad[k],
                                 rel_error(cvs[k].gradient, vgrad[k]), first_tol))
    for i, name in enumerate(names):
        out.rows.append(CheckRow(f"d2{name}", second[i], hess[i], rel_error(second[i], hess[i]),
                                 second_tol))
    for k in kinds:
        out.rows.append(CheckRow(f"d2{vlabel[k]}", cvs[k].hessian, vhess[k],
                                 rel_error(cvs[k].hessian, vhess[k]), second_tol))
    return out
