"""Outer modified-Newton optimization of a smoothness selection criterion.

Each iteration refits by P-IRLS, runs the derivative iteration and takes a
Newton step in rho with the Hessian's eigenvalues replaced by their absolute
values (floored), so the step is always a descent direction.  Parameters
sitting at the box bound ("working infinity") with negligible gradient are
dropped from the step and re-enter when their gradient grows again.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import criteria
from .derivs import DerivativeBundle, DerivativeError, DerivConfig, derivative_iteration
from .families import pearson_stat
from .pirls import RHO_BOUND, PirlsConfig, PirlsError, PirlsState, pirls_fit

log = logging.getLogger(__name__)


class OptimizationError(RuntimeError):
    pass


@dataclass
class OptimizerConfig:
    criterion: str | None = None
    gamma: float = 1.0
    grad_tol: float = 1e-6
    hess_tol: float = 1e-6
    max_outer: int = 100
    max_half: int = 30
    rho_bound: float = RHO_BOUND
    drop_frac: float = 1e-4
    reentry: float = 10.0
    eig_floor: float = 1e-10
    max_step: float = 5.0
    probe_bound: bool = True
    rho0: np.ndarray | None = None
    pirls: PirlsConfig = field(default_factory=lambda: PirlsConfig(tol=1e-11, beta_tol=1e-9))
    deriv: DerivConfig = field(default_factory=DerivConfig)
    callback: Callable | None = None

    def __post_init__(self):
        if min(self.grad_tol, self.hess_tol, self.rho_bound, self.max_step) <= 0:
            raise ValueError("tolerances and bounds must be positive")
        if self.criterion is not None and self.criterion not in criteria.KINDS:
            raise ValueError(f"unknown criterion {self.criterion!r}")


@dataclass
class Certificate:
    grad_norm: float
    min_hessian_eigenvalue: float
    dropped_set: list[int]


@dataclass
class OptResult:
    rho_hat: np.ndarray
    fitted: PirlsState
    criterion: criteria.CriterionValue
    bundle: DerivativeBundle
    outer_iterations: int
    converged: bool
    certificate: Certificate
    message: str = ""
    history: list[float] = field(default_factory=list)


def newton_step(grad, hess, active=None, eig_floor: float = 1e-10) -> np.ndarray:
    """-Xi |Lambda|^-1 Xi^T g on the active set, zero elsewhere."""
    grad = np.asarray(grad, dtype=float)
    M = grad.size
    idx = np.arange(M) if active is None else np.asarray(sorted(active), dtype=int)
    step = np.zeros(M)
    if idx.size == 0:
        return step
    g = grad[idx]
    H = np.asarray(hess, dtype=float)[np.ix_(idx, idx)]
    lam, Xi = np.linalg.eigh(0.5 * (H + H.T))
    big = np.max(np.abs(lam))
    floor = eig_floor * big if big > 0 else 1.0
    lam_bar = np.maximum(np.abs(lam), floor)
    step[idx] = -Xi @ ((Xi.T @ g) / lam_bar)
    return step


def choose_criterion(family, kind=None) -> str:
    if kind is not None:
        return kind
    return "aic" if family.scale_known else "gcv"


class _Evaluator:
    def __init__(self, model, cfg, kind):
        self.model = model
        self.cfg = cfg
        self.kind = kind
        fam = model.family
        self.phi = fam.scale if fam.scale_known else 1.0

    def fit(self, rho, beta0=None) -> PirlsState | None:
        try:
            return pirls_fit(self.model, rho, self.cfg.pirls, beta0)
        except PirlsError:
            if beta0 is None:
                return None
        try:
            return pirls_fit(self.model, rho, self.cfg.pirls, None)
        except PirlsError:
            return None

    def value(self, st: PirlsState) -> float:
        m = self.model
        Pst = pearson_stat(st.w, st.z, m.X @ st.beta)
        try:
            return criteria.criterion_value(self.kind, st.deviance, Pst, st.tau, m.n,
                                            self.cfg.gamma, self.phi)
        except criteria.CriterionError:
            return np.inf

    def full(self, st: PirlsState):
        bundle = derivative_iteration(st, self.model, self.cfg.deriv)
        cv = criteria.evaluate(self.kind, bundle, self.model.n, self.model.family, self.cfg.gamma)
        return bundle, cv


def optimize(model, config: OptimizerConfig | None = None, criterion: str | None = None) -> OptResult:
    """Minimize the chosen criterion over log smoothing parameters."""
    cfg = config or OptimizerConfig()
    kind = choose_criterion(model.family, criterion or cfg.criterion)
    if kind == "aic" and not model.family.scale_known:
        raise criteria.CriterionError("AIC needs a family with known scale")
    ev = _Evaluator(model, cfg, kind)
    bound = cfg.rho_bound
    M = model.M
    rho = np.clip(model.initial_rho() if cfg.rho0 is None else np.asarray(cfg.rho0, float),
                  -bound, bound)

    st = ev.fit(rho)
    if st is None:
        raise PirlsError("P-IRLS failed at the initial smoothing parameters", rho)
    bundle, cv = ev.full(st)
    history = [cv.value]
    if cfg.callback:
        cfg.callback(0, rho.copy(), cv)
    dropped: set[int] = set()
    converged = False
    message = "maximum outer iterations reached"
    it = 0
    cert = None
    for it in range(1, cfg.max_outer + 1):
        V, g, H = cv.value, cv.gradient, cv.hessian
        scale = 1.0 + abs(V)
        thr = cfg.drop_frac * scale
        at_bound = np.abs(rho) >= bound - 1e-8
        for k in range(M):
            if k in dropped:
                if abs(g[k]) > cfg.reentry * thr:
                    dropped.discard(k)
            elif at_bound[k] and abs(g[k]) < thr:
                dropped.add(k)
        # bound-held: descent direction points out of the box
        held = {k for k in range(M)
                if at_bound[k] and np.sign(-g[k]) == np.sign(rho[k]) and k not in dropped}
        inactive = dropped | held
        active = [k for k in range(M) if k not in inactive]
        ga = g[active]
        Ha = H[np.ix_(active, active)]
        gnorm = float(np.max(np.abs(ga))) / scale if active else 0.0
        min_eig = float(np.linalg.eigvalsh(Ha).min()) / scale if active else 0.0
        cert = Certificate(gnorm, min_eig, sorted(inactive))
        if gnorm < cfg.grad_tol:
            if min_eig > -cfg.hess_tol:
                probe = _probe_upper_bound(ev, rho, st, V, active, bound) if cfg.probe_bound else None
                if probe is None:
                    converged = True
                    message = "converged"
                    break
                rho, st, bundle, cv = probe
                history.append(cv.value)
                if cfg.callback:
                    cfg.callback(it, rho.copy(), cv)
                continue
            lam_, Xi = np.linalg.eigh(Ha)
            direction = Xi[:, 0] * (-np.sign(Xi[:, 0] @ ga) or 1.0)
            step = np.zeros(M)
            step[active] = direction
        else:
            step = newton_step(g, H, active, cfg.eig_floor)
        # a long step can land on the flat plateau near a bound and stall there
        big = np.max(np.abs(step))
        if big > cfg.max_step:
            step *= cfg.max_step / big

        accepted = None
        for _ in range(cfg.max_half + 1):
            rho_try = np.clip(rho + step, -bound, bound)
            if np.allclose(rho_try, rho, rtol=0, atol=1e-14):
                break
            st_try = ev.fit(rho_try, st.beta)
            if st_try is not None and ev.value(st_try) < V:
                try:
                    b_try, cv_try = ev.full(st_try)
                except DerivativeError:
                    log.debug("derivative iteration failed at %s; retreating", rho_try)
                else:
                    accepted = (rho_try, st_try, b_try, cv_try)
                    break
            step = step / 2
        if accepted is None:
            message = "step halving failed to reduce the criterion"
            break
        rho, st, bundle, cv = accepted
        history.append(cv.value)
        if cfg.callback:
            cfg.callback(it, rho.copy(), cv)
    else:
        it = cfg.max_outer

    if cert is None:
        cert = Certificate(np.inf, np.nan, [])
    return OptResult(rho, st, cv, bundle, it, converged, cert, message, history)


def _probe_upper_bound(ev, rho, st, V, active, bound):
    """Try sending each interior rho_k to working infinity.

    The criterion along a term's rho often has a shallow interior minimum
    separated by a bump from the plateau where the term is penalized out.
    Newton cannot see past the bump, so each interior parameter is tried
    at the upper bound and the best improvement, if any, is returned.
    """
    best = None
    tol = 1e-10 * (1.0 + abs(V))
    for k in active:
        if rho[k] >= bound - 1e-8:
            continue
        r = rho.copy()
        r[k] = bound
        st_try = ev.fit(r, st.beta)
        if st_try is None:
            continue
        v = ev.value(st_try)
        if v < V - tol and (best is None or v < best[0]):
            best = (v, r, st_try)
    if best is None:
        return None
    _, r, st_try = best
    try:
        bundle, cv = ev.full(st_try)
    except DerivativeError:
        return None
    return r, st_try, bundle, cv


def edf_per_term(fitted: PirlsState, model) -> dict[str, float]:
    """EDF of each term from the diagonal of B W X = P K^T W X."""
    d = fitted.decomp
    WX = fitted.w[:, None] * model.X
    F_diag = np.einsum("ij,ji->i", d.P, d.K.T @ WX)
    out = {}
    for label, sl in model.term_index.items():
        out[label] = float(F_diag[sl].sum())
    return out


def fit_gam(model, criterion=None, **kw) -> OptResult:
    return optimize(model, OptimizerConfig(criterion=criterion, **kw))
