"""Tests for the simulation harness.

Oracles: closed-form symmetry of the median-crossing rule (equal tail
indices give P(y=1)=1/2), hand-built panels for the forecast-set rules,
and exact re-runs for determinism (same seed, different worker counts,
different repetition totals must reproduce cells byte for byte).
"""

import numpy as np
import pytest

from tailbin.errors import ConfigError
from tailbin.experiments import (
    LPS_HEADER,
    SUMMARY_HEADER,
    DgpTruth,
    ExperimentConfig,
    _forecast_eligible,
    dgp_exp1,
    dgp_exp2,
    lps_csv_text,
    mixture_tail_thickness,
    run_experiment1,
    run_experiment2,
    summary_csv_text,
)
from tailbin.numerics import make_rng_stream, quantile_abs_t
from tailbin.panel_model import PanelData


def exp1_config(**overrides):
    base = dict(
        experiment="exp1", alpha_x=1.0, alpha_eps=1.0, n=2000, reps=3,
        base_seed=11,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def exp2_config(**overrides):
    base = dict(
        experiment="exp2", alpha_x=1.0, alpha_eps=1.0, n=400, t=40, reps=2,
        base_seed=11,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


# ---------------------------------------------------------------------------
# configuration validation


class TestConfig:
    def test_unknown_experiment_rejected(self):
        with pytest.raises(ConfigError, match="unknown experiment"):
            exp1_config(experiment="exp3")

    @pytest.mark.parametrize("field", ["alpha_x", "alpha_eps"])
    @pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
    def test_tail_indices_must_be_positive_reals(self, field, bad):
        with pytest.raises(ConfigError, match=field):
            exp1_config(**{field: bad})

    def test_exp2_requires_period_count(self):
        with pytest.raises(ConfigError, match="period count"):
            ExperimentConfig(
                experiment="exp2", alpha_x=1.0, alpha_eps=1.0, n=100, reps=1
            )

    def test_default_tail_quantiles(self):
        assert exp1_config().tail_q == 0.975
        assert exp2_config().tail_q == 0.90

    def test_tail_q_bounds(self):
        with pytest.raises(ConfigError, match="tail_q"):
            exp1_config(tail_q=1.0)

    def test_eval_quantiles_sorted_and_deduplicated(self):
        cfg = exp1_config(eval_quantiles=(0.99, 0.95, 0.99))
        assert cfg.eval_quantiles == (0.95, 0.99)

    def test_estimators_canonical_order(self):
        cfg = exp1_config(estimators=("local_logit", "tail", "logit_all"))
        assert cfg.estimators == ("tail", "logit_all", "local_logit")

    def test_unknown_estimator_named_in_error(self):
        with pytest.raises(ConfigError, match="local_linear"):
            exp2_config(estimators=("tail", "local_linear"))

    def test_exp2_requires_tail_estimator(self):
        with pytest.raises(ConfigError, match="requires the tail estimator"):
            exp2_config(estimators=("logit_all",))

    def test_bad_cs_method(self):
        with pytest.raises(ConfigError, match="cs_method"):
            exp1_config(cs_method="hill")

    def test_from_dict_missing_field_is_named(self):
        raw = {"experiment": "exp1", "alpha_x": 1.0, "alpha_eps": 1.0, "n": 100}
        with pytest.raises(ConfigError, match="'reps'"):
            ExperimentConfig.from_dict(raw)

    def test_from_dict_exp2_needs_t(self):
        raw = {
            "experiment": "exp2", "alpha_x": 1.0, "alpha_eps": 1.0,
            "n": 100, "reps": 1,
        }
        with pytest.raises(ConfigError, match="'t'"):
            ExperimentConfig.from_dict(raw)

    def test_from_dict_unknown_field_is_named(self):
        raw = {
            "experiment": "exp1", "alpha_x": 1.0, "alpha_eps": 1.0,
            "n": 100, "reps": 1, "horizon": 3,
        }
        with pytest.raises(ConfigError, match="horizon"):
            ExperimentConfig.from_dict(raw)

    def test_from_dict_roundtrip_lists_to_tuples(self):
        raw = {
            "experiment": "exp1", "alpha_x": 1.0, "alpha_eps": 1.5,
            "n": 500, "reps": 2, "eval_quantiles": [0.95, 0.99],
            "estimators": ["tail"],
        }
        cfg = ExperimentConfig.from_dict(raw)
        assert cfg.eval_quantiles == (0.95, 0.99)
        assert cfg.estimators == ("tail",)

    def test_driver_rejects_mismatched_config(self):
        with pytest.raises(ConfigError):
            run_experiment1(exp2_config())
        with pytest.raises(ConfigError):
            run_experiment2(exp1_config())


# ---------------------------------------------------------------------------
# data generators


class TestDgp:
    def test_exp1_balanced_at_equal_indices(self):
        # x - eps is symmetric around 0 when both tails match, and the
        # crossing level is then the median difference, exactly 0.
        cfg = exp1_config(n=20000)
        data, truth = dgp_exp1(make_rng_stream(3, 0), cfg)
        assert truth.crossing_level == pytest.approx(0.0, abs=1e-12)
        assert abs(float(np.mean(data.y)) - 0.5) < 0.02

    def test_exp1_covariate_positive(self):
        data, _ = dgp_exp1(make_rng_stream(4, 0), exp1_config())
        assert np.all(data.x > 0)

    def test_truth_composition(self):
        truth = DgpTruth(alpha_x=1.0, alpha_eps=1.5, crossing_level=0.0)
        assert truth.alpha1 == 1.0
        assert truth.alpha0 == 2.5
        assert truth.elasticity_limit == -1.5
        assert truth.theta_star == -1.5

    def test_truth_probability_curve(self):
        truth = DgpTruth(alpha_x=1.0, alpha_eps=1.0, crossing_level=0.0)
        assert truth.pi(-1.0) == 0.0
        xs = [1.0, 5.0, 50.0]
        ps = [truth.pi(v) for v in xs]
        assert all(p1 < p2 for p1, p2 in zip(ps, ps[1:]))
        assert truth.pi(1e6) > 0.999
        # at the common median the crossing rule is a fair coin
        assert truth.pi(quantile_abs_t(1.0, 0.5)) == pytest.approx(0.5, abs=1e-9)

    def test_exp2_shapes_and_forecast_column(self):
        cfg = exp2_config(n=50, t=12)
        panel, _ = dgp_exp2(make_rng_stream(5, 0), cfg)
        assert panel.y.shape == (50, 13)
        assert panel.x.shape == (50, 13)
        assert np.all(panel.z == 1.0)
        assert np.all(np.isfinite(panel.y))

    def test_mixture_thickness_floor_and_center(self):
        stream = make_rng_stream(6, 0)
        lam = mixture_tail_thickness(stream, 0.05, 4000)
        assert np.all(lam >= 0.05)
        stream = make_rng_stream(6, 1)
        lam = mixture_tail_thickness(stream, 1.0, 4000)
        # 80/20 mixture of +-0.25 shifts: mean offset 0.15
        assert abs(float(np.mean(lam)) - 1.15) < 0.02
        assert np.min(lam) > 0.4 and np.max(lam) < 1.7


# ---------------------------------------------------------------------------
# forecast-set rules


class TestForecastEligible:
    def build(self):
        x = np.array([
            [5.0, 5.0, 1.0],   # tail switcher, next in tail -> eligible
            [5.0, 5.0, 1.0],   # tail periods all ones -> no switch
            [1.0, 1.0, 1.0],   # never in tail
            [5.0, 2.0, 1.0],   # tie at the cutoff counts as tail
            [5.0, 5.0, 1.0],   # switcher but next period below cutoff
        ])
        y = np.array([
            [1.0, 0.0, 0.0],
            [1.0, 1.0, 0.0],
            [0.0, 1.0, 1.0],
            [0.0, 1.0, 1.0],
            [1.0, 0.0, 0.0],
        ])
        panel = PanelData(ids=np.arange(5), y=y, x=x)
        x_next = np.array([3.0, 3.0, 3.0, 2.0, 1.0])
        y_next = np.array([1.0, 1.0, 1.0, 0.0, 1.0])
        return panel, x_next, y_next

    def test_rules_jointly_applied(self):
        panel, x_next, y_next = self.build()
        idx = _forecast_eligible(panel, 2.0, x_next, y_next)
        assert list(idx) == [0, 3]

    def test_missing_forecast_period_drops_unit(self):
        panel, x_next, y_next = self.build()
        x_next[0] = np.nan
        assert list(_forecast_eligible(panel, 2.0, x_next, y_next)) == [3]
        y_next[3] = np.nan
        assert list(_forecast_eligible(panel, 2.0, x_next, y_next)) == []


# ---------------------------------------------------------------------------
# drivers


class TestExperiment1Driver:
    def test_repetitions_are_schedule_independent(self, monkeypatch):
        cfg_small = exp1_config(reps=2, estimators=("tail",))
        cfg_large = exp1_config(reps=4, estimators=("tail",))
        first = run_experiment1(cfg_small).rep_cells
        prefix = run_experiment1(cfg_large).rep_cells[:2]
        assert first == prefix

    def test_csv_identical_across_worker_counts(self, monkeypatch):
        cfg = exp1_config(n=800, reps=5)
        monkeypatch.setenv("TAILBIN_THREADS", "1")
        serial = summary_csv_text(run_experiment1(cfg).summary_rows)
        monkeypatch.setenv("TAILBIN_THREADS", "4")
        threaded = summary_csv_text(run_experiment1(cfg).summary_rows)
        assert serial == threaded

    def test_thread_env_validated(self, monkeypatch):
        monkeypatch.setenv("TAILBIN_THREADS", "zero")
        with pytest.raises(ConfigError, match="integer"):
            run_experiment1(exp1_config(reps=2, estimators=("tail",)))
        monkeypatch.setenv("TAILBIN_THREADS", "0")
        with pytest.raises(ConfigError, match=">= 1"):
            run_experiment1(exp1_config(reps=2, estimators=("tail",)))

    def test_estimator_filter_controls_rows(self):
        res = run_experiment1(exp1_config(estimators=("tail",)))
        names = {r.estimator for r in res.summary_rows}
        assert names == {"tail"}
        estimands = [r.estimand for r in res.summary_rows if r.estimator == "tail"]
        assert estimands[:2] == ["alpha1", "alpha0"]

    def test_failed_repetitions_become_na_cells(self):
        # 60 observations leave ~1 tail point per class: the tail fit
        # must fail every repetition while smoother baselines survive.
        cfg = exp1_config(n=60, reps=3, estimators=("tail", "local_logit"))
        res = run_experiment1(cfg)
        by_key = {
            (r.estimator, r.estimand, r.eval_point): r for r in res.summary_rows
        }
        tail_row = by_key[("tail", "alpha1", None)]
        assert tail_row.n_ok == 0
        assert tail_row.bias is None and tail_row.sd is None
        local_row = by_key[("local_logit", "prob", 0.95)]
        assert local_row.n_ok == 3

    def test_summary_recovers_truth_at_scale(self):
        cfg = exp1_config(n=20000, reps=4, estimators=("tail",))
        res = run_experiment1(cfg)
        by_key = {
            (r.estimator, r.estimand, r.eval_point): r for r in res.summary_rows
        }
        assert abs(by_key[("tail", "alpha1", None)].bias) < 0.15
        assert abs(by_key[("tail", "alpha0", None)].bias) < 0.4
        assert by_key[("tail", "prob", 0.975)].rmse < 0.1


@pytest.fixture(scope="module")
def exp2_result():
    return run_experiment2(exp2_config())


class TestExperiment2Driver:
    @pytest.fixture
    def result(self, exp2_result):
        return exp2_result

    def test_theta_recovered(self, result):
        thetas = [t for t in result.rep_theta if t is not None]
        assert len(thetas) == 2
        for t in thetas:
            assert -2.5 < t < -0.3

    def test_lps_rows_cover_estimators_in_order(self, result):
        names = [r.estimator for r in result.lps_rows]
        assert names == ["tail", "logit_all", "logit_tail"]
        for row in result.lps_rows:
            assert row.n_f is None or row.n_f >= 1
            assert row.mean_lps is None or row.mean_lps < 0.0

    def test_baselines_have_paired_tests(self, result):
        by_name = {r.estimator: r for r in result.lps_rows}
        assert by_name["tail"].t_vs_tail is None
        for name in ("logit_all", "logit_tail"):
            row = by_name[name]
            if row.sum_lps is not None and row.t_vs_tail is not None:
                assert 0.0 <= row.p_vs_tail <= 1.0

    def test_common_forecast_set_sizes(self, result):
        for lps in result.rep_lps:
            sizes = {v.n for v in lps.values()}
            assert len(sizes) <= 1  # all estimators score the same units

    def test_deterministic_rerun(self, result):
        again = run_experiment2(exp2_config())
        assert again.rep_theta == result.rep_theta
        assert lps_csv_text(again.lps_rows) == lps_csv_text(result.lps_rows)


# ---------------------------------------------------------------------------
# table rendering


class TestCsvText:
    def test_summary_layout(self):
        res = run_experiment1(exp1_config(reps=2, estimators=("tail",)))
        text = summary_csv_text(res.summary_rows)
        lines = text.splitlines()
        assert lines[0] == SUMMARY_HEADER
        assert text.endswith("\n")
        assert len(lines) == 1 + len(res.summary_rows)
        first = lines[1].split(",")
        assert first[0] == "exp1" and first[3] == "tail"

    def test_none_rendering_blank(self):
        cfg = exp1_config(n=60, reps=2, estimators=("tail",))
        text = summary_csv_text(run_experiment1(cfg).summary_rows)
        row = text.splitlines()[1].split(",")
        assert row[6] == "" and row[9] == "0"

    def test_lps_layout(self):
        res = run_experiment2(exp2_config())
        lines = lps_csv_text(res.lps_rows).splitlines()
        assert lines[0] == LPS_HEADER
        assert [ln.split(",")[2] for ln in lines[1:]] == [
            "tail", "logit_all", "logit_tail",
        ]
