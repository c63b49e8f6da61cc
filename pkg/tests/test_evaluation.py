"""Scoring, paired difference tests, and summary statistics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailbin.errors import (
    AlignmentError,
    EmptyDataError,
    InsufficientDataError,
    InvalidParameterError,
)
from tailbin.evaluation import (
    DiffTestResult,
    ForecastSet,
    LpsResult,
    bias_sd_rmse,
    log_predictive_score,
    lps_diff_test,
)


def _fs(p, y, units=None):
    p = np.asarray(p, dtype=float)
    if units is None:
        units = np.arange(p.size)
    return ForecastSet(units=units, p_hat=p, y=np.asarray(y))


def _random_fs(seed, n=50):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.05, 0.95, size=n)
    y = (rng.uniform(size=n) < p).astype(int)
    return _fs(p, y)


class TestForecastSet:
    def test_clamps_probabilities(self):
        fs = _fs([0.0, 1.0, 0.5], [0, 1, 1])
        assert fs.p_hat[0] == 1e-12
        assert fs.p_hat[1] == 1.0 - 1e-12
        assert fs.p_hat[2] == 0.5

    def test_rejects_out_of_range(self):
        with pytest.raises(InvalidParameterError):
            _fs([1.5, 0.5], [1, 0])
        with pytest.raises(InvalidParameterError):
            _fs([np.nan, 0.5], [1, 0])

    def test_rejects_nonbinary_outcomes(self):
        with pytest.raises(InvalidParameterError):
            _fs([0.4, 0.6], [0, 2])

    def test_rejects_duplicate_units(self):
        with pytest.raises(InvalidParameterError):
            _fs([0.4, 0.6], [0, 1], units=np.array([7, 7]))

    def test_rejects_length_mismatch(self):
        with pytest.raises(InvalidParameterError):
            ForecastSet(units=np.arange(3), p_hat=np.array([0.5, 0.5]),
                        y=np.array([0, 1, 0]))


class TestLogPredictiveScore:
    def test_confident_correct_scores_near_zero(self):
        res = log_predictive_score(_fs([1.0 - 1e-12], [1], units=[0]))
        assert abs(res.mean_lps) < 1e-11

    def test_half_probability(self):
        res = log_predictive_score(_fs([0.5, 0.5, 0.5], [0, 1, 1]))
        assert res.mean_lps == pytest.approx(np.log(0.5), abs=1e-15)
        assert res.n == 3

    def test_mixed_scores(self):
        # log .8 for the hit, log .6 for the miss on p=.4
        res = log_predictive_score(_fs([0.8, 0.4], [1, 0]))
        expected = (np.log(0.8) + np.log(0.6)) / 2.0
        assert res.mean_lps == pytest.approx(expected, rel=1e-12)

    def test_empty_raises(self):
        fs = ForecastSet(units=np.array([]), p_hat=np.array([]), y=np.array([]))
        with pytest.raises(EmptyDataError):
            log_predictive_score(fs)

    def test_order_invariance_exact(self):
        fs = _random_fs(0, n=257)
        perm = np.random.default_rng(1).permutation(257)
        shuffled = ForecastSet(units=fs.units[perm], p_hat=fs.p_hat[perm],
                               y=fs.y[perm])
        assert log_predictive_score(fs).sum_lps == log_predictive_score(shuffled).sum_lps

    def test_sum_equals_mean_times_n_exactly(self):
        res = log_predictive_score(_random_fs(2, n=123))
        assert res.sum_lps == res.mean_lps * res.n


class TestLpsDiffTest:
    def test_identical_sets_degenerate(self):
        fs = _random_fs(3)
        res = lps_diff_test(fs, fs)
        assert res.degenerate
        assert res.mean_diff == 0.0
        assert np.isnan(res.t) and np.isnan(res.p)

    def test_uniform_improvement_detected(self):
        rng = np.random.default_rng(4)
        n = 1000
        pb = rng.uniform(0.2, 0.8, size=n)
        y = (rng.uniform(size=n) < 0.5).astype(int)
        pa = np.where(y == 1, pb + 0.1, pb - 0.1)
        a, b = _fs(pa, y), _fs(pb, y)
        res = lps_diff_test(a, b)
        assert res.mean_diff > 0.0
        assert res.p < 0.05
        assert not res.degenerate

    def test_antisymmetric(self):
        a, b = _random_fs(5), _random_fs(6)
        fwd = lps_diff_test(a, b)
        rev = lps_diff_test(b, a)
        assert rev.mean_diff == -fwd.mean_diff
        assert rev.t == -fwd.t
        assert rev.p == fwd.p

    def test_alignment_by_unit_id(self):
        # same records, scrambled storage order in b: differences must
        # still be computed per unit, here exactly zero
        fs = _random_fs(7, n=40)
        perm = np.random.default_rng(8).permutation(40)
        b = ForecastSet(units=fs.units[perm], p_hat=fs.p_hat[perm], y=fs.y[perm])
        res = lps_diff_test(fs, b)
        assert res.degenerate and res.mean_diff == 0.0

    def test_hand_computed_mean_diff(self):
        a = _fs([0.9, 0.2], [1, 0], units=[0, 1])
        b = _fs([0.6, 0.5], [1, 0], units=[1, 0])
        # aligned: unit0 (.9 vs .5, y=1), unit1 (.2 vs .6, y=0)
        d0 = np.log(0.9) - np.log(0.5)
        d1 = np.log(0.8) - np.log(0.4)
        with pytest.raises(InsufficientDataError):
            lps_diff_test(a, b)
        pad_p = np.full(10, 0.5)
        pad_y = np.tile([0, 1], 5)
        a_big = _fs(np.r_[0.9, 0.2, pad_p], np.r_[1, 0, pad_y])
        b_big = ForecastSet(units=np.r_[1, 0, np.arange(2, 12)],
                            p_hat=np.r_[0.6, 0.5, pad_p],
                            y=np.r_[0, 1, pad_y])
        res = lps_diff_test(a_big, b_big)
        assert res.mean_diff == pytest.approx((d0 + d1) / 12.0, rel=1e-12)

    def test_unmatched_units_raise(self):
        a = _random_fs(9, n=20)
        b = ForecastSet(units=a.units + 100, p_hat=a.p_hat, y=a.y)
        with pytest.raises(AlignmentError):
            lps_diff_test(a, b)
        c = _random_fs(10, n=21)
        with pytest.raises(AlignmentError):
            lps_diff_test(a, c)

    def test_too_few_matched(self):
        fs = _random_fs(11, n=9)
        other = ForecastSet(units=fs.units, p_hat=np.roll(fs.p_hat, 1), y=fs.y)
        with pytest.raises(InsufficientDataError):
            lps_diff_test(fs, other)

    def test_constant_nonzero_difference_degenerate(self):
        y = np.ones(12, dtype=int)
        a = _fs(np.full(12, 0.8), y)
        b = _fs(np.full(12, 0.4), y)
        res = lps_diff_test(a, b)
        assert res.degenerate
        assert res.mean_diff == pytest.approx(np.log(2.0), rel=1e-12)


class TestBiasSdRmse:
    def test_exact_estimates(self):
        assert bias_sd_rmse([2.5, 2.5, 2.5], 2.5) == (0.0, 0.0, 0.0)

    def test_symmetric_pair(self):
        res = bias_sd_rmse([1.0, 3.0], 2.0)
        assert res.bias == 0.0
        assert res.sd == 1.0
        assert res.rmse == 1.0

    def test_pure_bias(self):
        res = bias_sd_rmse([3.0, 3.0], 2.0)
        assert res == (1.0, 0.0, 1.0)

    def test_empty_raises(self):
        with pytest.raises(EmptyDataError):
            bias_sd_rmse([], 0.0)

    def test_nonfinite_raises(self):
        with pytest.raises(InvalidParameterError):
            bias_sd_rmse([1.0, np.inf], 0.0)

    @settings(max_examples=60, deadline=None)
    @given(
        st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40),
        st.floats(-1e3, 1e3),
    )
    def test_decomposition_identity(self, values, truth):
        res = bias_sd_rmse(values, truth)
        assert res.rmse ** 2 == pytest.approx(res.bias ** 2 + res.sd ** 2, abs=1e-9)
