"""Command-line front end.

    gamdirect fit CONFIG.yaml
    gamdirect predict REPORT.json DATA.csv [-o OUT.csv]
    gamdirect simulate {bench41,gamm42,concurvity43} [--case C] [--replicates R] [--seed S]
    gamdirect check-derivs CONFIG.yaml --rho R1 R2 ...

Exit codes: 0 ok, 2 usage or config error, 3 data error, 4 fit did not
converge, 5 derivative check failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import harness
from .derivcheck import check_derivatives
from .families import DomainError, make_family
from .optimizer import OptimizerConfig, edf_per_term, optimize
from .pirls import PirlsError
from .smooths import BuiltTerm, DataError, TermSpec, _design, assemble

log = logging.getLogger("gamdirect")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NONCONVERGED = 4
EXIT_CHECK = 5


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

@dataclass
class FitConfig:
    data: str
    response: str
    family: str
    terms: list[TermSpec]
    link: str | None = None
    scale: float | None = None
    offset: str | None = None
    weights: str | None = None
    parametric: list[str] = field(default_factory=list)
    intercept: bool = True
    criterion: str | None = None
    gamma: float = 1.0
    optimizer: dict = field(default_factory=dict)
    output: str = "report.json"
    grid_points: int = 100
    base_dir: Path = Path(".")

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path


_TERM_KEYS = {"covariates", "basis", "dim", "shrinkage", "by", "label"}
_OPT_KEYS = {f.name for f in fields(OptimizerConfig)} - {"pirls", "deriv", "callback", "rho0",
                                                         "criterion", "gamma"}


def load_config(path) -> FitConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    for key in ("data", "response", "family", "terms"):
        if key not in raw:
            raise ConfigError(f"config is missing {key!r}")
    known = {f.name for f in fields(FitConfig)} - {"base_dir"}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    if not isinstance(raw["terms"], list) or not raw["terms"]:
        raise ConfigError("terms must be a non-empty list")
    terms = []
    for t in raw["terms"]:
        if isinstance(t, str):
            t = {"covariates": [t]}
        bad = set(t) - _TERM_KEYS
        if bad:
            raise ConfigError(f"unknown term keys: {sorted(bad)}")
        if "dim" in t and isinstance(t["dim"], list):
            t = {**t, "dim": tuple(t["dim"])}
        try:
            terms.append(TermSpec(**t))
        except (TypeError, ValueError) as err:
            raise ConfigError(f"bad term {t}: {err}") from err
    opt = raw.get("optimizer") or {}
    bad = set(opt) - _OPT_KEYS - {"method"}
    if bad:
        raise ConfigError(f"unknown optimizer keys: {sorted(bad)}")
    if raw.get("criterion") not in (None, "aic", "gcv", "gacv"):
        raise ConfigError(f"unknown criterion {raw['criterion']!r}")
    cfg = FitConfig(**{**raw, "terms": terms, "optimizer": opt, "base_dir": path.parent})
    try:
        make_family(cfg.family, cfg.link, cfg.scale)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    return cfg


def optimizer_config(cfg: FitConfig) -> OptimizerConfig:
    opt = dict(cfg.optimizer)
    method = opt.pop("method", "qr")
    pirls = OptimizerConfig().pirls
    pirls.method = method
    try:
        return OptimizerConfig(criterion=cfg.criterion, gamma=cfg.gamma, pirls=pirls, **opt)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad optimizer settings: {err}") from err


def read_csv(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise DataError(f"cannot read data {path}: {err}") from err


def build_model(cfg: FitConfig, df: pd.DataFrame):
    fam, link = make_family(cfg.family, cfg.link, cfg.scale)
    if df.isna().any().any():
        raise DataError("data contain missing values")
    try:
        return assemble(cfg.terms, df, fam, link, offset=cfg.offset, response=cfg.response,
                        weights=cfg.weights, intercept=cfg.intercept, parametric=cfg.parametric)
    except DomainError as err:
        raise DataError(str(err)) from err


# ---------------------------------------------------------------------------
# report

@dataclass
class FitReport:
    family: str
    link: str
    scale_known: bool
    scale: float
    response: str
    offset: str | None
    weights: str | None
    intercept: bool
    parametric: list[str]
    terms: list[dict]
    term_index: dict[str, list[int]]
    coefficients: list[float]
    edf: dict[str, float]
    tau: float
    criterion: dict
    deviance: float
    pearson: float
    phi_hat: float
    rho: list[float]
    iterations: dict
    rank: dict
    converged: bool
    message: str
    n: int
    grids: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "FitReport":
        return cls(**json.loads(text))

    def built_terms(self) -> list[BuiltTerm]:
        return [BuiltTerm.from_dict(t) for t in self.terms]

    def design(self, data) -> np.ndarray:
        n = len(data)
        return _design(self.built_terms(), data, self.intercept, self.parametric, n)


def _floats(a):
    return [float(v) for v in np.ravel(a)]


def make_report(cfg: FitConfig, model, res) -> FitReport:
    st, cv, d = res.fitted, res.criterion, res.fitted.decomp
    return FitReport(
        family=model.family.kind, link=model.link.kind,
        scale_known=bool(model.family.scale_known), scale=float(model.family.scale),
        response=cfg.response, offset=cfg.offset, weights=cfg.weights,
        intercept=model.intercept, parametric=list(model.parametric),
        terms=[t.to_dict() for t in model.terms],
        term_index={k: [s.start, s.stop] for k, s in model.term_index.items()},
        coefficients=_floats(st.beta), edf=edf_per_term(st, model), tau=float(st.tau),
        criterion={"kind": cv.kind, "value": float(cv.value), "gamma": float(cv.gamma),
                   "gradient": _floats(cv.gradient),
                   "gradient_norm": float(res.certificate.grad_norm),
                   "min_hessian_eigenvalue": float(res.certificate.min_hessian_eigenvalue),
                   "dropped": [int(k) for k in res.certificate.dropped_set]},
        deviance=float(cv.D), pearson=float(cv.P), phi_hat=float(cv.scale_estimate),
        rho=_floats(res.rho_hat),
        iterations={"outer": int(res.outer_iterations), "pirls_last": int(st.iterations),
                    "derivative_last": int(res.bundle.iterations)},
        rank={"rank": int(d.rank), "q": int(model.q), "dropped_columns": [int(c) for c in d.dropped]},
        converged=bool(res.converged), message=res.message, n=int(model.n),
    )


def term_grid(model, res, term: BuiltTerm, n_points: int) -> pd.DataFrame:
    """Term contribution and standard error on a regular grid."""
    sp = term.spec
    if sp.basis == "random_effect":
        grid = {sp.covariates[0]: np.asarray(term.levels, dtype=object)}
    elif sp.basis == "bspline":
        t = term.knots[0]
        grid = {sp.covariates[0]: np.linspace(t[0], t[-1], n_points)}
    else:
        m = max(int(np.sqrt(n_points)) * 3, 10)
        a = np.linspace(term.knots[0][0], term.knots[0][-1], m)
        b = np.linspace(term.knots[1][0], term.knots[1][-1], m)
        A, Bg = np.meshgrid(a, b, indexing="ij")
        grid = {sp.covariates[0]: A.ravel(), sp.covariates[1]: Bg.ravel()}
    npts = len(next(iter(grid.values())))
    if sp.by:
        grid[sp.by] = np.ones(npts)
    Xg = term.basis(grid)
    sl = model.term_index[sp.label]
    st = res.fitted
    beta = st.beta[sl]
    Pj = st.decomp.P[sl]
    phi = res.criterion.scale_estimate
    se = np.sqrt(phi * np.sum((Xg @ Pj) ** 2, axis=1))
    out = pd.DataFrame({k: v for k, v in grid.items() if k != sp.by})
    out["fit"] = Xg @ beta
    out["se"] = se
    return out


def _safe_name(label: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in label).strip("_")


# ---------------------------------------------------------------------------
# commands

def cmd_fit(args) -> int:
    cfg = load_config(args.config)
    df = read_csv(cfg.resolve(cfg.data))
    model = build_model(cfg, df)
    ocfg = optimizer_config(cfg)
    res = optimize(model, ocfg)
    report = make_report(cfg, model, res)
    out = Path(args.output) if args.output else cfg.resolve(cfg.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    for term in model.terms:
        gpath = out.with_name(f"{out.stem}_grid_{_safe_name(term.label)}.csv")
        term_grid(model, res, term, cfg.grid_points).to_csv(gpath, index=False)
        report.grids[term.label] = gpath.name
    out.write_text(report.to_json())
    print(f"criterion {report.criterion['kind']} = {report.criterion['value']:.10g}")
    print(f"tau = {report.tau:.4f}  phi_hat = {report.phi_hat:.6g}")
    for k, v in report.edf.items():
        print(f"  edf {k:<20} {v:8.3f}")
    print(f"{res.message}; report written to {out}")
    if not res.converged:
        print(f"fit did not converge: {res.message}", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def predict_frame(report: FitReport, df: pd.DataFrame) -> pd.DataFrame:
    terms = report.built_terms()
    X = _design(terms, df, report.intercept, report.parametric, len(df))
    eta = X @ np.asarray(report.coefficients)
    if report.offset:
        if report.offset not in df:
            raise DataError(f"missing column {report.offset!r}")
        eta = eta + df[report.offset].to_numpy(dtype=float)
    fam, link = make_family(report.family, report.link)
    flags = np.zeros(len(df), dtype=bool)
    for t in terms:
        flags |= t.out_of_range(df)
    return pd.DataFrame({"eta": eta, "mu": link.linkinv(eta), "extrapolated": flags.astype(int)})


def cmd_predict(args) -> int:
    try:
        report = FitReport.from_json(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError, TypeError) as err:
        raise ConfigError(f"cannot read report {args.report}: {err}") from err
    df = read_csv(args.data)
    pred = predict_frame(report, df)
    if args.output:
        pred.to_csv(args.output, index=False)
    else:
        pred.to_csv(sys.stdout, index=False)
    return EXIT_OK


def cmd_simulate(args) -> int:
    sc = harness.SimScenario(args.scenario, args.case, args.n, args.replicates, args.seed)
    study = harness.run_study(sc, workers=args.workers)
    paths = harness.write_study(study, args.out)
    sys.stdout.write(harness.summary_text(study))
    edf = harness.results_frame(study.results).filter(like="edf[")
    if not edf.empty:
        print(edf.to_string(float_format=lambda v: f"{v:.3f}"))
    print(f"outputs: {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK if study.summary["failures"] == 0 else EXIT_NONCONVERGED


def cmd_check_derivs(args) -> int:
    cfg = load_config(args.config)
    df = read_csv(cfg.resolve(cfg.data))
    model = build_model(cfg, df)
    rho = np.asarray(args.rho, dtype=float) if args.rho else model.initial_rho()
    if rho.size != model.M:
        raise ConfigError(f"model has {model.M} smoothing parameters, got {rho.size} rho values")
    first = args.threshold if args.threshold is not None else args.first_tol
    second = args.threshold if args.threshold is not None else args.second_tol
    chk = check_derivatives(model, rho, cfg.criterion, cfg.gamma, first_tol=first,
                            second_tol=second)
    print(f"criterion {chk.criterion} at rho = {np.array2string(rho, precision=4)}")
    sys.stdout.write(chk.table())
    return EXIT_OK if chk.ok else EXIT_CHECK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gamdirect", description="GAM fitting with direct smoothness selection")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit a model described by a YAML config")
    f.add_argument("config")
    f.add_argument("-o", "--output", help="report path (overrides the config)")
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="predict from a fit report")
    pr.add_argument("report")
    pr.add_argument("data")
    pr.add_argument("-o", "--output")
    pr.set_defaults(func=cmd_predict)

    s = sub.add_parser("simulate", help="run a simulation study")
    s.add_argument("scenario", choices=harness.SCENARIOS)
    s.add_argument("--case", default="poisson", choices=harness.CASES)
    s.add_argument("--n", type=int, default=400)
    s.add_argument("--replicates", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--out", default="sim_out")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("check-derivs", help="compare analytic and FD derivatives")
    c.add_argument("config")
    c.add_argument("--rho", type=float, nargs="+")
    c.add_argument("--first-tol", type=float, default=1e-4)
    c.add_argument("--second-tol", type=float, default=1e-3)
    c.add_argument("--threshold", type=float, help="one limit for every quantity")
    c.set_defaults(func=cmd_check_derivs)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DomainError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except PirlsError as err:
        rho = "" if err.rho is None else f" at rho={np.array2string(np.asarray(err.rho), precision=4)}"
        print(f"fit failed{rho}: {err}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
