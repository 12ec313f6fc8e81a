import numpy as np
import pandas as pd
import pytest
from scipy.stats import truncnorm

from gamdirect.families import make_family
from gamdirect.harness import (
    SimScenario,
    Truth,
    case_mean,
    concurvity_f,
    draw_response,
    f1,
    f2,
    f3,
    gen_bench41,
    gen_concurvity43,
    gen_gamm42,
    make_rng,
    predictive_deviance_loss,
    replicate_rngs,
    results_frame,
    run_replicate,
    run_study,
    summary_text,
    truncated_normal_mean,
    write_study,
)


class TestTruthFunctions:
    def test_spot_values(self):
        assert f1(0.5) == pytest.approx(2.0)
        assert f2(0.0) == 1.0
        assert f3(0.0) == 0.0

    def test_case_scalings(self):
        assert case_mean("poisson", 7.0) == pytest.approx(np.e)
        assert case_mean("gamma", 7.0) == pytest.approx(np.e)
        assert case_mean("binary", 5.0) == pytest.approx(0.5)
        assert case_mean("quasi", 6.0) == pytest.approx(np.e)
        with pytest.raises(ValueError):
            case_mean("tweedie", 1.0)

    def test_concurvity_function(self):
        assert concurvity_f(0.5) == 0.0
        assert concurvity_f(1.0) == pytest.approx(17.5)

    def test_truncated_mean(self):
        m = np.array([0.3, 1.0, 4.0])
        sd = 2 * np.sqrt(m)
        ref = truncnorm.mean(-m / sd, np.inf, loc=m, scale=sd)
        np.testing.assert_allclose(truncated_normal_mean(m), ref, rtol=1e-10)


class TestResponses:
    def test_quasi_draws_are_nonnegative(self):
        y = draw_response("quasi", np.full(5000, 0.5), make_rng(1))
        assert np.all(y >= 0)
        # rejection keeps the truncated mean, not the untruncated one
        assert np.mean(y) == pytest.approx(truncated_normal_mean(0.5), rel=0.05)

    def test_gamma_has_unit_scale(self):
        y = draw_response("gamma", np.full(20000, 3.0), make_rng(2))
        assert np.mean(y) == pytest.approx(3.0, rel=0.03)
        assert np.var(y) == pytest.approx(9.0, rel=0.08)

    def test_binary_and_poisson_support(self):
        rng = make_rng(3)
        assert set(np.unique(draw_response("binary", np.full(100, 0.4), rng))) <= {0.0, 1.0}
        y = draw_response("poisson", np.full(100, 2.0), rng)
        np.testing.assert_array_equal(y, np.round(y))


class TestGenerators:
    def test_bench_layout(self):
        data, truth = gen_bench41("poisson", 400, make_rng(0))
        assert sorted(data) == ["x1", "x2", "x3", "x4", "y"]
        assert all(v.shape == (400,) for v in data.values())
        assert truth.case == "poisson"
        np.testing.assert_allclose(truth.mean(data),
                                   np.exp((f1(data["x1"]) + f2(data["x2"]) + f3(data["x3"])) / 7))

    def test_bench_is_deterministic(self):
        a, _ = gen_bench41("gamma", 200, make_rng(11))
        b, _ = gen_bench41("gamma", 200, make_rng(11))
        for k in a:
            assert a[k].tobytes() == b[k].tobytes()

    def test_group_variance(self):
        rng = make_rng(4)
        b = np.concatenate([gen_gamm42("poisson", 400, rng)[2] for _ in range(60)])
        assert b.size == 2400
        assert np.var(b) == pytest.approx(4.0, abs=0.5)

    def test_groups_of_ten(self):
        data, _, b = gen_gamm42("binary", 400, make_rng(5))
        assert b.size == 40
        np.testing.assert_array_equal(np.bincount(data["group"]), np.full(40, 10))
        with pytest.raises(ValueError):
            gen_gamm42("binary", 405, make_rng(5))

    def test_zero_group_sd_reduces_to_bench(self):
        a, _, b = gen_gamm42("gamma", 200, make_rng(6), sigma_b=0.0)
        ref, _ = gen_bench41("gamma", 200, make_rng(6))
        np.testing.assert_array_equal(b, 0.0)
        for k in ref:
            np.testing.assert_array_equal(a[k], ref[k])

    def test_concurvity_covariates(self):
        data = gen_concurvity43(400, make_rng(7))
        assert np.corrcoef(data["d"], data["x"] ** 3)[0, 1] > 0.99
        assert set(np.unique(data["y"])) <= {0.0, 1.0}
        with pytest.raises(ValueError):
            gen_concurvity43(50, make_rng(7))

    def test_replicate_streams_are_independent_of_count(self):
        a = replicate_rngs(9, 3)[1].uniform(size=5)
        b = replicate_rngs(9, 10)[1].uniform(size=5)
        np.testing.assert_array_equal(a, b)


class TestLoss:
    def truth(self, case, shift=0.0):
        def cov(n, rng):
            return {"x": rng.uniform(size=n)}
        return Truth(case, cov, lambda d: case_mean(case, 7 * (1 + d["x"])) + shift)

    def test_truth_has_zero_loss(self):
        t = self.truth("poisson")
        assert predictive_deviance_loss(t.mean, t, n_test=2000, rng=make_rng(0)) == 0.0

    def test_constant_mean_is_worse(self):
        t = self.truth("poisson")
        const = lambda d: np.full(len(d["x"]), np.mean(t.mean(d)))
        assert predictive_deviance_loss(const, t, n_test=5000, rng=make_rng(1)) > 0.0

    def test_gaussian_shift_invariance(self):
        def cov(n, rng):
            return {"x": rng.uniform(size=n)}
        fit = lambda d: 1 + 0.9 * d["x"]
        t0 = Truth("gaussian", cov, lambda d: 1 + d["x"])
        t1 = Truth("gaussian", cov, lambda d: 4 + d["x"])
        fam = make_family("gaussian")[0]
        a = predictive_deviance_loss(fit, t0, n_test=3000, rng=make_rng(2), family=fam)
        b = predictive_deviance_loss(lambda d: fit(d) + 3, t1, n_test=3000, rng=make_rng(2),
                                     family=fam)
        assert a > 0
        assert b == pytest.approx(a, rel=1e-9)

    def test_quasi_uses_conditional_mean_error(self):
        t = self.truth("quasi")
        loss = predictive_deviance_loss(t.expected, t, n_test=1000, rng=make_rng(3))
        assert loss == pytest.approx(0.0, abs=1e-20)


class TestStudy:
    def test_scenario_validation(self):
        with pytest.raises(ValueError):
            SimScenario(kind="bench42")
        with pytest.raises(ValueError):
            SimScenario(case="tweedie")
        with pytest.raises(ValueError):
            SimScenario(n=20)
        assert SimScenario(kind="concurvity43").case == "binary"

    def test_deterministic_and_order_free(self):
        sc = SimScenario(kind="bench41", case="poisson", n=200, replicates=3, rng_seed=42,
                         n_test=2000)
        a = results_frame(run_study(sc).results).drop(columns="cpu_seconds")
        b = results_frame(run_study(sc).results).drop(columns="cpu_seconds")
        pd.testing.assert_frame_equal(a, b)
        single = run_replicate(sc, 2, replicate_rngs(42, 3)[2])
        assert single.criterion == a.loc[2, "criterion"]
        assert single.predictive_deviance_loss == a.loc[2, "predictive_deviance_loss"]

    def test_summary_and_outputs(self, tmp_path):
        sc = SimScenario(kind="gamm42", case="binary", n=200, replicates=2, rng_seed=3)
        study = run_study(sc)
        assert study.summary["replicates"] == 2
        assert study.summary["failures"] == 0
        # predictive loss is not defined for the mixed model scenario
        assert study.summary["predictive_deviance_loss"]["mean"] is None
        paths = write_study(study, tmp_path)
        assert all(p.exists() for p in paths.values())
        frame = pd.read_csv(paths["csv"])
        assert len(frame) == 2 and "edf[re(group)]" in frame
        assert "failures 0" in summary_text(study)

    def test_concurvity_replicate_reports_comparison(self):
        sc = SimScenario(kind="concurvity43", n=400, replicates=1, rng_seed=1)
        r = run_replicate(sc, 0, replicate_rngs(1, 1)[0])
        assert r.converged
        assert set(r.edf) == {"(Intercept)", "f1", "f2"}
        assert np.isfinite(r.mse) and "mse_unpenalized" in r.extra
