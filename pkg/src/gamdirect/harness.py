"""Simulation studies: four-family benchmark, GAMM variant and concurvity.

Data are generated with numpy's Philox counter-based generator; replicate
``i`` of a study uses the ``i``-th child of ``SeedSequence(rng_seed)``, so
results do not depend on execution order or on the number of workers.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
from scipy.special import expit, log_ndtr
from scipy.stats import norm

from .families import make_family
from .optimizer import OptimizerConfig, edf_per_term, optimize
from .pirls import PirlsError, pirls_fit
from .smooths import TermSpec, assemble

log = logging.getLogger(__name__)

SCENARIOS = ("bench41", "gamm42", "concurvity43")
CASES = ("binary", "poisson", "gamma", "quasi")
CASE_FAMILY = {"binary": "binomial", "poisson": "poisson", "gamma": "gamma",
               "quasi": "quasi", "gaussian": "gaussian"}
CASE_CRITERION = {"binary": "aic", "poisson": "aic", "gamma": "gcv", "quasi": "gcv"}


def f1(x):
    return 2 * np.sin(np.pi * x)


def f2(x):
    return np.exp(2 * x)


def f3(x):
    return x**11 * (10 * (1 - x)) ** 6 / 5 + 1e4 * x**3 * (1 - x) ** 10


def concurvity_f(d):
    return (d - 0.5 + 10 * (d - 0.5) ** 3) * 10


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def replicate_rngs(seed: int, replicates: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(replicates)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


def case_mean(case: str, eta_tilde):
    """True mean of the (untruncated) response model for a case."""
    if case == "binary":
        return expit((eta_tilde - 5) / 2.5)
    if case in ("poisson", "gamma"):
        return np.exp(eta_tilde / 7)
    if case == "quasi":
        return np.exp(eta_tilde / 6)
    if case == "gaussian":
        return np.asarray(eta_tilde, dtype=float)
    raise ValueError(f"unknown case {case!r}")


def truncated_normal_mean(m):
    """E(y) for y ~ N(m, 4m) truncated below at zero."""
    m = np.asarray(m, dtype=float)
    sd = 2 * np.sqrt(m)
    a = m / sd
    # m + sd * phi(a) / Phi(a), the inverse Mills ratio form
    return m + sd * np.exp(norm.logpdf(a) - log_ndtr(a))


def draw_response(case: str, mu, rng: np.random.Generator, sd: float = 1.0):
    mu = np.asarray(mu, dtype=float)
    if case == "binary":
        return rng.binomial(1, mu).astype(float)
    if case == "poisson":
        return rng.poisson(mu).astype(float)
    if case == "gamma":
        # shape 1 gives scale parameter 1 in the exponential-family sense
        return rng.gamma(1.0, mu)
    if case == "quasi":
        sd_i = 2 * np.sqrt(mu)
        y = rng.normal(mu, sd_i)
        bad = y < 0
        while np.any(bad):
            y[bad] = rng.normal(mu[bad], sd_i[bad])
            bad = y < 0
        return y
    if case == "gaussian":
        return mu + sd * rng.normal(size=mu.shape)
    raise ValueError(f"unknown case {case!r}")


@dataclass
class Truth:
    """Data-generating model: covariate sampler plus conditional mean."""

    case: str
    covariates: Callable
    mean: Callable
    sd: float = 1.0

    def expected(self, data):
        """E(y | x); differs from ``mean`` only for the truncated case."""
        mu = self.mean(data)
        return truncated_normal_mean(mu) if self.case == "quasi" else mu

    def sample(self, n: int, rng: np.random.Generator):
        data = self.covariates(n, rng)
        mu = self.mean(data)
        data["y"] = draw_response(self.case, mu, rng, self.sd)
        return data, mu


def _uniform4(n, rng):
    u = rng.uniform(size=(4, n))
    return {f"x{j + 1}": u[j] for j in range(4)}


def bench_eta_tilde(data):
    return f1(data["x1"]) + f2(data["x2"]) + f3(data["x3"])


def _bench_truth(case):
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}")
    return Truth(case, _uniform4, lambda d: case_mean(case, bench_eta_tilde(d)))


def gen_bench41(case: str, n: int, rng: np.random.Generator):
    """Four U(0,1) covariates; the first three carry signal."""
    truth = _bench_truth(case)
    data, _ = truth.sample(n, rng)
    return data, truth


def gen_gamm42(case: str, n: int, rng: np.random.Generator, sigma_b: float = 2.0,
               group_size: int = 10):
    """Benchmark data plus N(0, sigma_b^2) group effects on the unscaled predictor.

    With ``sigma_b == 0`` no effects are drawn, so the stream (and the data)
    match ``gen_bench41``.
    """
    if case not in CASES:
        raise ValueError(f"unknown case {case!r}")
    if n % group_size:
        raise ValueError(f"n={n} is not a multiple of the group size {group_size}")
    data = _uniform4(n, rng)
    ngroups = n // group_size
    group = np.repeat(np.arange(ngroups), group_size)
    b = rng.normal(0.0, sigma_b, ngroups) if sigma_b > 0 else np.zeros(ngroups)
    mu = case_mean(case, bench_eta_tilde(data) + b[group])
    data["y"] = draw_response(case, mu, rng)
    data["group"] = group
    return data, _bench_truth(case), b


def gen_concurvity43(n: int, rng: np.random.Generator):
    """x, z ~ U(0,1), d = x^3 + N(0, 0.01^2), Bernoulli response."""
    if n < 100:
        raise ValueError("the concurvity generator needs n >= 100")
    x = rng.uniform(size=n)
    z = rng.uniform(size=n)
    d = x**3 + rng.normal(size=n) * 0.01
    p = expit(concurvity_f(d))
    y = rng.binomial(1, p).astype(float)
    return {"x": x, "z": z, "d": d, "y": y}


# ---------------------------------------------------------------------------
# model templates and metrics

def bench_template(dim: int = 10) -> list[TermSpec]:
    return [TermSpec(f"x{j}", dim=dim) for j in range(1, 5)]


def gamm_template(dim: int = 10) -> list[TermSpec]:
    return bench_template(dim) + [TermSpec("group", basis="random_effect")]


def concurvity_template() -> list[TermSpec]:
    return [TermSpec(["x", "z"], basis="tensor_bspline", dim=(6, 5), shrinkage=True, label="f1"),
            TermSpec("d", dim=10, shrinkage=True, label="f2")]


def fitted_mean(model, beta) -> Callable:
    """Closure predicting E(y) on new data from a fitted coefficient vector."""
    def predict(data):
        return model.link.linkinv(model.design(data) @ beta)
    return predict


def predictive_deviance_loss(fitted: Callable, truth: Truth, case: str | None = None,
                             n_test: int = 10000, rng: np.random.Generator | None = None,
                             family=None) -> float:
    """Mean test deviance under the fitted means minus that under the truth.

    For the quasi case the error model is wrong, so the mean square error of
    the conditional means is returned instead.
    """
    case = case or truth.case
    rng = rng if rng is not None else make_rng(0)
    data, mu_true = truth.sample(n_test, rng)
    mu_hat = fitted(data)
    if case == "quasi":
        return float(np.mean((mu_hat - truth.expected(data)) ** 2))
    fam = family or make_family(CASE_FAMILY[case])[0]
    mu_hat = fam.clip_mu(mu_hat)
    y = data["y"]
    return float(np.mean(fam.dev_resids(y, mu_hat)) - np.mean(fam.dev_resids(y, mu_true)))


# ---------------------------------------------------------------------------
# study runner

@dataclass
class SimScenario:
    kind: str = "bench41"
    case: str = "poisson"
    n: int = 400
    replicates: int = 1
    rng_seed: int = 0
    sigma_b: float = 2.0
    n_test: int = 10000

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.kind!r}")
        if self.kind == "concurvity43":
            self.case = "binary"
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}")
        if self.n < 50 or self.replicates < 1:
            raise ValueError("need n >= 50 and replicates >= 1")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")


@dataclass
class ReplicateResult:
    replicate: int
    converged: bool
    predictive_deviance_loss: float = np.nan
    mse: float = np.nan
    cpu_seconds: float = np.nan
    edf: dict = field(default_factory=dict)
    criterion: float = np.nan
    grad_norm: float = np.nan
    min_hessian_eigenvalue: float = np.nan
    outer_iterations: int = 0
    rho: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    message: str = ""


def default_template(kind: str) -> list[TermSpec]:
    return {"bench41": bench_template, "gamm42": gamm_template,
            "concurvity43": concurvity_template}[kind]()


def _generate(sc: SimScenario, rng):
    if sc.kind == "bench41":
        data, truth = gen_bench41(sc.case, sc.n, rng)
        return data, truth, {}
    if sc.kind == "gamm42":
        data, truth, b = gen_gamm42(sc.case, sc.n, rng, sc.sigma_b)
        return data, truth, {"b": b}
    data = gen_concurvity43(sc.n, rng)
    return data, None, {}


def _term_values(model, beta, data, label):
    sl = model.term_index[label]
    return model.X[:, sl] @ beta[sl]


def run_replicate(sc: SimScenario, index: int, rng, template=None,
                  config: OptimizerConfig | None = None) -> ReplicateResult:
    """Generate, fit and score one replicate. Failures are recorded, not raised."""
    template = template or default_template(sc.kind)
    data, truth, info = _generate(sc, rng)
    fam, link = make_family(CASE_FAMILY[sc.case])
    model = assemble(template, data, fam, link)
    cfg = config or OptimizerConfig()
    kind = cfg.criterion or CASE_CRITERION[sc.case]
    t0 = time.process_time()
    try:
        res = optimize(model, cfg, criterion=kind)
    except (PirlsError, ValueError, np.linalg.LinAlgError, ArithmeticError) as err:
        return ReplicateResult(index, False, cpu_seconds=time.process_time() - t0,
                               message=f"{type(err).__name__}: {err}")
    cpu = time.process_time() - t0
    beta = res.fitted.beta
    out = ReplicateResult(
        index, res.converged, cpu_seconds=cpu, edf=edf_per_term(res.fitted, model),
        criterion=res.criterion.value, grad_norm=res.certificate.grad_norm,
        min_hessian_eigenvalue=res.certificate.min_hessian_eigenvalue,
        outer_iterations=res.outer_iterations, rho=[float(r) for r in res.rho_hat],
        message=res.message,
    )
    if sc.kind == "concurvity43":
        f2_true = concurvity_f(data["d"])
        f2_true = f2_true - f2_true.mean()
        out.mse = float(np.mean((_term_values(model, beta, data, "f2") - f2_true) ** 2))
        rho_lo = np.full(model.M, -cfg.rho_bound)
        unpen = pirls_fit(model, rho_lo, cfg.pirls, raise_on_fail=False)
        out.extra["mse_unpenalized"] = float(
            np.mean((_term_values(model, unpen.beta, data, "f2") - f2_true) ** 2))
        out.extra["unpenalized_converged"] = bool(unpen.converged)
        return out
    eta_true = model.link.linkfun(truth.mean(data))
    if sc.kind == "gamm42":
        # fixed-effect part only: group effects set to zero on both sides
        re = model.term_index["re(group)"]
        eta_hat = model.X @ beta - model.X[:, re] @ beta[re]
    else:
        eta_hat = model.X @ beta
    out.mse = float(np.mean((eta_hat - eta_true) ** 2))
    test_rng = np.random.Generator(np.random.Philox(rng.integers(2**63)))
    if sc.kind == "bench41":
        out.predictive_deviance_loss = predictive_deviance_loss(
            fitted_mean(model, beta), truth, sc.case, sc.n_test, test_rng)
    return out


def _replicate_task(args):
    sc, i, seed_seq, template, config = args
    return run_replicate(sc, i, np.random.Generator(np.random.Philox(seed_seq)), template, config)


@dataclass
class StudyResult:
    scenario: SimScenario
    results: list[ReplicateResult]
    summary: dict


def summarize(results: list[ReplicateResult]) -> dict:
    def quant(vals):
        v = np.asarray([x for x in vals if np.isfinite(x)], dtype=float)
        if v.size == 0:
            return {"mean": None, "q10": None, "median": None, "q90": None}
        q = np.quantile(v, [0.1, 0.5, 0.9])
        return {"mean": float(v.mean()), "q10": float(q[0]), "median": float(q[1]),
                "q90": float(q[2])}

    ok = [r for r in results if r.converged]
    return {
        "replicates": len(results),
        "failures": len(results) - len(ok),
        "predictive_deviance_loss": quant(r.predictive_deviance_loss for r in ok),
        "mse": quant(r.mse for r in ok),
        "cpu_seconds": quant(r.cpu_seconds for r in results),
    }


def run_study(scenario: SimScenario, template=None, config: OptimizerConfig | None = None,
              workers: int = 1) -> StudyResult:
    """Fit every replicate of a scenario and aggregate.

    Replicate results are collected in index order whatever ``workers`` is.
    """
    seqs = np.random.SeedSequence(scenario.rng_seed).spawn(scenario.replicates)
    tasks = [(scenario, i, s, template, config) for i, s in enumerate(seqs)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate_task, tasks))
    else:
        results = [_replicate_task(t) for t in tasks]
    for r in results:
        if not r.converged:
            log.warning("replicate %d failed: %s", r.replicate, r.message)
    return StudyResult(scenario, results, summarize(results))


def results_frame(results: list[ReplicateResult]) -> pd.DataFrame:
    rows = []
    for r in results:
        row = {k: v for k, v in asdict(r).items() if k not in ("edf", "rho", "extra")}
        row.update({f"edf[{k}]": v for k, v in r.edf.items()})
        row.update({f"rho{j}": v for j, v in enumerate(r.rho)})
        row.update(r.extra)
        rows.append(row)
    return pd.DataFrame(rows)


def summary_text(study: StudyResult) -> str:
    sc, s = study.scenario, study.summary
    lines = [f"scenario {sc.kind}  case {sc.case}  n {sc.n}  seed {sc.rng_seed}",
             f"replicates {s['replicates']}  failures {s['failures']}",
             f"{'metric':<26}{'mean':>12}{'q10':>12}{'median':>12}{'q90':>12}"]
    for key in ("predictive_deviance_loss", "mse", "cpu_seconds"):
        vals = s[key]
        cells = "".join(f"{'-' if vals[c] is None else format(vals[c], '.4g'):>12}"
                        for c in ("mean", "q10", "median", "q90"))
        lines.append(f"{key:<26}{cells}")
    return "\n".join(lines) + "\n"


def write_study(study: StudyResult, out_dir, stem: str | None = None) -> dict[str, Path]:
    """Write JSON summary, aligned text and per-replicate CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sc = study.scenario
    stem = stem or f"{sc.kind}_{sc.case}"
    paths = {"json": out / f"{stem}_summary.json", "text": out / f"{stem}_summary.txt",
             "csv": out / f"{stem}_replicates.csv"}
    payload = {"scenario": asdict(sc), "summary": study.summary}
    paths["json"].write_text(json.dumps(payload, indent=2) + "\n")
    paths["text"].write_text(summary_text(study))
    results_frame(study.results).to_csv(paths["csv"], index=False)
    return paths
