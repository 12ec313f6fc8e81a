"""Basis and penalty construction, and assembly of the full model matrix.

Univariate smooths are cubic B-splines with a second order difference
penalty. Every smooth (except ``by`` terms and random effects) has a
sum-to-zero constraint absorbed by a single Householder reflection, so the
constrained block has one column fewer than the raw basis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.interpolate import BSpline

from .families import Family, Link

DEGREE = 3
SHRINK_FRAC = 1e-2
_EIG_RTOL = 1e-10


class DataError(ValueError):
    """Missing columns or unusable covariate values."""


@dataclass
class TermSpec:
    covariates: list[str]
    basis: str = "bspline"
    dim: int | tuple[int, int] = 10
    shrinkage: bool = False
    by: str | None = None
    label: str | None = None

    def __post_init__(self):
        if isinstance(self.covariates, str):
            self.covariates = [self.covariates]
        self.covariates = list(self.covariates)
        if self.basis not in ("bspline", "tensor_bspline", "random_effect"):
            raise ValueError(f"unknown basis {self.basis!r}")
        if self.basis == "tensor_bspline":
            if len(self.covariates) != 2:
                raise ValueError("tensor terms need exactly two covariates")
            if np.isscalar(self.dim):
                self.dim = (int(self.dim), int(self.dim))
            self.dim = tuple(int(d) for d in self.dim)
            if min(self.dim) < DEGREE + 1:
                raise ValueError("tensor margins need dim >= 4")
        elif len(self.covariates) != 1:
            raise ValueError(f"{self.basis} terms take one covariate")
        elif self.basis == "bspline":
            self.dim = int(self.dim)
            if self.dim < DEGREE + 1:
                raise ValueError("B-spline terms need dim >= 4")
        if self.label is None:
            kind = {"bspline": "s", "tensor_bspline": "te", "random_effect": "re"}[self.basis]
            name = f"{kind}({','.join(self.covariates)})"
            if self.by:
                name += f":{self.by}"
            self.label = name


@dataclass
class PenaltyBlock:
    block: np.ndarray
    sqrt: np.ndarray
    offset: int = 0
    term: str = ""

    @property
    def rank(self) -> int:
        return self.sqrt.shape[1]

    @property
    def size(self) -> int:
        return self.block.shape[0]

    @property
    def cols(self) -> slice:
        return slice(self.offset, self.offset + self.size)

    def full(self, q: int) -> np.ndarray:
        S = np.zeros((q, q))
        S[self.cols, self.cols] = self.block
        return S

    def sqrt_full(self, q: int) -> np.ndarray:
        R = np.zeros((q, self.rank))
        R[self.cols] = self.sqrt
        return R

    def quad(self, beta) -> float:
        # ||R^T b||^2 rather than b^T S b: the latter cancels badly when b is
        # nearly in the null space and lambda is huge
        r = self.sqrt.T @ np.asarray(beta)[self.cols]
        return float(r @ r)

    def times(self, v):
        """S_j v for a full length-q vector or a q x k matrix."""
        out = np.zeros_like(v, dtype=float)
        out[self.cols] = self.block @ v[self.cols]
        return out


def penalty_sqrt(S) -> np.ndarray:
    """Minimum-column square root R with R R^T = S for a PSD matrix."""
    S = 0.5 * (S + S.T)
    lam, U = np.linalg.eigh(S)
    if lam.size == 0 or lam[-1] <= 0:
        return np.zeros((S.shape[0], 0))
    keep = lam > _EIG_RTOL * lam[-1]
    return U[:, keep] * np.sqrt(lam[keep])


def make_penalty(S, offset=0, term="") -> PenaltyBlock:
    S = 0.5 * (S + S.T)
    return PenaltyBlock(S, penalty_sqrt(S), offset, term)


def apply_shrinkage(block: PenaltyBlock, epsilon_frac: float = SHRINK_FRAC) -> PenaltyBlock:
    """Lift the null space eigenvalues so a large lambda can zero the term."""
    lam, U = np.linalg.eigh(block.block)
    if lam[-1] <= 0:
        raise ValueError("cannot shrink an all-zero penalty")
    pos = lam > _EIG_RTOL * lam[-1]
    if pos.all():
        return PenaltyBlock(block.block.copy(), block.sqrt.copy(), block.offset, block.term)
    lam = np.where(pos, lam, epsilon_frac * lam[pos].min())
    S = (U * lam) @ U.T
    return make_penalty(S, block.offset, block.term)


# ---------------------------------------------------------------------------
# constraint absorption


def householder_vector(c) -> np.ndarray:
    c = np.asarray(c, dtype=float).ravel()
    v = c.copy()
    alpha = np.linalg.norm(c)
    v[0] += np.copysign(alpha, c[0])
    return v / np.linalg.norm(v)


def constraint_null_basis(v) -> np.ndarray:
    """Z (k x k-1) with orthonormal columns orthogonal to the constraint."""
    H = np.eye(v.size) - 2 * np.outer(v, v)
    return H[:, 1:]


# ---------------------------------------------------------------------------
# B-splines


def quantile_knots(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.unique(x).size < dim:
        raise DataError(f"too few distinct covariate values for dim={dim}")
    breaks = np.quantile(x, np.linspace(0, 1, dim - DEGREE + 1))
    if np.any(np.diff(breaks) <= 0):
        raise DataError("quantile knots are not distinct; reduce dim")
    return np.r_[[breaks[0]] * DEGREE, breaks, [breaks[-1]] * DEGREE]


def bspline_basis(x, knots) -> np.ndarray:
    """Cubic B-spline design matrix; extrapolates outside the knot range."""
    x = np.asarray(x, dtype=float)
    return BSpline.design_matrix(x, knots, DEGREE, extrapolate=True).toarray()


def difference_penalty(k: int, order: int = 2) -> np.ndarray:
    D = np.diff(np.eye(k), order, axis=0)
    return D.T @ D


def greville(knots) -> np.ndarray:
    """Greville abscissae: x = sum_j xi_j B_j(x) exactly."""
    t = np.asarray(knots, dtype=float)
    k = t.size - DEGREE - 1
    return np.array([t[j + 1:j + DEGREE + 1].mean() for j in range(k)])


def divided_difference_penalty(xi) -> np.ndarray:
    """D^T D with D the second divided differences at the abscissae ``xi``.

    Rows are scaled by twice the squared mean spacing, so with evenly
    spaced ``xi`` this is the ordinary second-difference penalty.  Linear
    functions (coefficients linear in ``xi``) are annihilated whatever the
    knot spacing, which the index-based version only manages for evenly
    spaced, unclamped knots.
    """
    xi = np.asarray(xi, dtype=float)
    k = xi.size
    hbar = (xi[-1] - xi[0]) / (k - 1)
    D = np.zeros((k - 2, k))
    for i in range(k - 2):
        h0, h1 = xi[i + 1] - xi[i], xi[i + 2] - xi[i + 1]
        c = 2 * hbar**2 / (h0 + h1)
        D[i, i:i + 3] = c * np.array([1 / h0, -1 / h0 - 1 / h1, 1 / h1])
    return D.T @ D


def spline_penalty(knots) -> np.ndarray:
    return divided_difference_penalty(greville(knots))


def row_kron(A, B) -> np.ndarray:
    return (A[:, :, None] * B[:, None, :]).reshape(A.shape[0], -1)


# ---------------------------------------------------------------------------
# built terms (enough state to rebuild the basis on new data)


@dataclass
class BuiltTerm:
    spec: TermSpec
    ncol: int
    knots: list[np.ndarray] = field(default_factory=list)
    hv: np.ndarray | None = None
    levels: list | None = None

    @property
    def label(self) -> str:
        return self.spec.label

    def raw_basis(self, data) -> np.ndarray:
        sp = self.spec
        if sp.basis == "random_effect":
            g = _column(data, sp.covariates[0])
            lookup = {lev: j for j, lev in enumerate(self.levels)}
            X = np.zeros((len(g), len(self.levels)))
            for i, gi in enumerate(g):
                j = lookup.get(_level_key(gi))
                if j is not None:
                    X[i, j] = 1.0
            return X
        if sp.basis == "bspline":
            return bspline_basis(_column(data, sp.covariates[0]), self.knots[0])
        B1 = bspline_basis(_column(data, sp.covariates[0]), self.knots[0])
        B2 = bspline_basis(_column(data, sp.covariates[1]), self.knots[1])
        return row_kron(B1, B2)

    def basis(self, data) -> np.ndarray:
        X = self.raw_basis(data)
        if self.hv is not None:
            X = X - 2 * np.outer(X @ self.hv, self.hv)
            X = X[:, 1:]
        if self.spec.by:
            X = X * _column(data, self.spec.by)[:, None]
        return X

    def out_of_range(self, data) -> np.ndarray:
        """Row flags for covariate values beyond the knot range."""
        flags = None
        if self.spec.basis == "random_effect":
            g = _column(data, self.spec.covariates[0])
            keys = set(self.levels)
            return np.array([_level_key(v) not in keys for v in g])
        for cov, t in zip(self.spec.covariates, self.knots):
            x = _column(data, cov)
            f = (x < t[0]) | (x > t[-1])
            flags = f if flags is None else flags | f
        return flags

    def to_dict(self) -> dict:
        sp = self.spec
        return {
            "covariates": sp.covariates,
            "basis": sp.basis,
            "dim": list(sp.dim) if isinstance(sp.dim, tuple) else sp.dim,
            "shrinkage": sp.shrinkage,
            "by": sp.by,
            "label": sp.label,
            "ncol": self.ncol,
            "knots": [t.tolist() for t in self.knots],
            "constraint": None if self.hv is None else self.hv.tolist(),
            "levels": self.levels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BuiltTerm":
        dim = d["dim"]
        spec = TermSpec(
            d["covariates"], d["basis"], tuple(dim) if isinstance(dim, list) else dim,
            d["shrinkage"], d["by"], d["label"],
        )
        hv = None if d["constraint"] is None else np.asarray(d["constraint"])
        return cls(spec, d["ncol"], [np.asarray(t) for t in d["knots"]], hv, d["levels"])


def _level_key(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)) and float(v).is_integer():
        return int(v)
    if isinstance(v, np.generic):
        return v.item()
    return v


def _column(data, name) -> np.ndarray:
    try:
        col = data[name]
    except (KeyError, IndexError):
        raise DataError(f"missing column {name!r}") from None
    col = np.asarray(col)
    if col.dtype.kind in "biuf":
        col = col.astype(float)
    return col


def _absorb_sum_to_zero(X, penalties):
    hv = householder_vector(X.sum(axis=0))
    Z = constraint_null_basis(hv)
    return X @ Z, [Z.T @ S @ Z for S in penalties], hv


def build_bspline_term(spec: TermSpec, x, by=None):
    """Constrained basis columns and penalty for a univariate smooth."""
    if spec.basis != "bspline":
        raise ValueError("expected a bspline term")
    x = np.asarray(x, dtype=float)
    knots = quantile_knots(x, spec.dim)
    X = bspline_basis(x, knots)
    S = spline_penalty(knots)
    term = BuiltTerm(spec, 0, [knots])
    if spec.by:
        X = X * np.asarray(by, dtype=float)[:, None]
        Ss = [S]
    else:
        X, Ss, term.hv = _absorb_sum_to_zero(X, [S])
    term.ncol = X.shape[1]
    pen = make_penalty(Ss[0], term=spec.label)
    if spec.shrinkage:
        pen = apply_shrinkage(pen)
    return X, pen, term


def build_tensor_term(spec: TermSpec, x1, x2, by=None):
    """Row-wise Kronecker basis with one penalty per margin."""
    if spec.basis != "tensor_bspline":
        raise ValueError("expected a tensor_bspline term")
    k1, k2 = spec.dim
    t1 = quantile_knots(x1, k1)
    t2 = quantile_knots(x2, k2)
    X = row_kron(bspline_basis(x1, t1), bspline_basis(x2, t2))
    S1 = np.kron(spline_penalty(t1), np.eye(k2))
    S2 = np.kron(np.eye(k1), spline_penalty(t2))
    term = BuiltTerm(spec, 0, [t1, t2])
    if spec.by:
        X = X * np.asarray(by, dtype=float)[:, None]
        Ss = [S1, S2]
    else:
        X, Ss, term.hv = _absorb_sum_to_zero(X, [S1, S2])
    term.ncol = X.shape[1]
    pens = [make_penalty(S, term=spec.label) for S in Ss]
    if spec.shrinkage:
        pens = [apply_shrinkage(p) for p in pens]
    return X, pens, term


def build_random_effect_term(spec: TermSpec, group, by=None):
    """Indicator columns with an identity penalty."""
    if spec.basis != "random_effect":
        raise ValueError("expected a random_effect term")
    keys = [_level_key(g) for g in np.asarray(group)]
    levels = sorted(set(keys), key=lambda v: (str(type(v)), v))
    if len(levels) < 2:
        raise DataError("random effect needs at least two levels")
    term = BuiltTerm(spec, len(levels), levels=levels)
    X = term.raw_basis({spec.covariates[0]: np.asarray(group)})
    if spec.by:
        X = X * np.asarray(by, dtype=float)[:, None]
    G = len(levels)
    pen = PenaltyBlock(np.eye(G), np.eye(G), 0, spec.label)
    return X, pen, term


# ---------------------------------------------------------------------------
# assembly


@dataclass
class AssembledModel:
    X: np.ndarray
    penalties: list[PenaltyBlock]
    offset: np.ndarray
    term_index: dict[str, slice]
    terms: list[BuiltTerm]
    y: np.ndarray
    weights: np.ndarray
    family: Family
    link: Link
    intercept: bool = True
    parametric: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def q(self) -> int:
        return self.X.shape[1]

    @property
    def M(self) -> int:
        return len(self.penalties)

    @property
    def n_parametric(self) -> int:
        return int(self.intercept) + len(self.parametric)

    def S_full(self, j: int) -> np.ndarray:
        return self.penalties[j].full(self.q)

    def total_penalty(self, lam) -> np.ndarray:
        S = np.zeros((self.q, self.q))
        for lj, p in zip(lam, self.penalties):
            S[p.cols, p.cols] += lj * p.block
        return S

    def penalty_root(self, lam) -> np.ndarray:
        """E with E^T E = sum_j lam_j S_j, stacked from the stored roots."""
        rows = []
        for lj, p in zip(lam, self.penalties):
            if p.rank:
                rows.append(np.sqrt(lj) * p.sqrt_full(self.q).T)
        if not rows:
            return np.zeros((0, self.q))
        return np.vstack(rows)

    def design(self, data) -> np.ndarray:
        """Rebuild the model matrix on new data."""
        return _design(self.terms, data, self.intercept, self.parametric, _data_length(data))

    def with_penalties(self, order: Sequence[int]) -> "AssembledModel":
        """Same model with the penalty list permuted."""
        return AssembledModel(
            self.X, [self.penalties[i] for i in order], self.offset, self.term_index,
            self.terms, self.y, self.weights, self.family, self.link, self.intercept,
            self.parametric,
        )

    def initial_rho(self) -> np.ndarray:
        """log of tr(X_j^T X_j) / tr(S_j) for each penalty."""
        rho = np.zeros(self.M)
        for j, p in enumerate(self.penalties):
            Xj = self.X[:, p.cols]
            ratio = np.sum(Xj**2) / max(np.trace(p.block), 1e-300)
            rho[j] = np.log(max(ratio, 1e-10))
        return rho


def _data_length(data) -> int:
    if hasattr(data, "shape"):
        return int(data.shape[0])
    return len(next(iter(data.values())))


def _design(terms, data, intercept, parametric, n) -> np.ndarray:
    blocks = []
    if intercept:
        blocks.append(np.ones((n, 1)))
    for c in parametric:
        blocks.append(_column(data, c).astype(float)[:, None])
    for t in terms:
        blocks.append(t.basis(data))
    return np.hstack(blocks) if blocks else np.zeros((n, 0))


def assemble(
    specs: Sequence[TermSpec],
    data: Mapping,
    family: Family,
    link: Link | None = None,
    offset: str | None = None,
    response: str = "y",
    weights: str | None = None,
    intercept: bool = True,
    parametric: Sequence[str] = (),
) -> AssembledModel:
    """Assemble X, the padded penalty list and the offset."""
    link = link or family.default_link
    y = family.check_y(_column(data, response))
    n = y.size
    blocks, pens, terms, index = [], [], [], {}
    col = 0
    if intercept:
        blocks.append(np.ones((n, 1)))
        index["(Intercept)"] = slice(0, 1)
        col = 1
    for c in parametric:
        blocks.append(_column(data, c).astype(float)[:, None])
        index[c] = slice(col, col + 1)
        col += 1
    for sp in specs:
        by = _column(data, sp.by) if sp.by else None
        if sp.basis == "bspline":
            Xj, pj, term = build_bspline_term(sp, _column(data, sp.covariates[0]), by)
            pj = [pj]
        elif sp.basis == "tensor_bspline":
            Xj, pj, term = build_tensor_term(
                sp, _column(data, sp.covariates[0]), _column(data, sp.covariates[1]), by
            )
        else:
            Xj, pj, term = build_random_effect_term(sp, _column(data, sp.covariates[0]), by)
            pj = [pj]
        if sp.label in index:
            raise ValueError(f"duplicate term label {sp.label!r}")
        index[sp.label] = slice(col, col + Xj.shape[1])
        for p in pj:
            p.offset = col
        col += Xj.shape[1]
        blocks.append(Xj)
        pens.extend(pj)
        terms.append(term)
    X = np.hstack(blocks)
    if X.shape[1] >= n:
        raise DataError(f"model has q={X.shape[1]} coefficients but only n={n} data")
    off = np.zeros(n) if offset is None else _column(data, offset).astype(float)
    w = np.ones(n) if weights is None else _column(data, weights).astype(float)
    if np.any(w < 0):
        raise DataError("prior weights must be non-negative")
    return AssembledModel(X, pens, off, index, terms, y, w, family, link, intercept, list(parametric))
