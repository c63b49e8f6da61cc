"""Threshold selection, Hill and rank-1/2 estimators, log-log plot data."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tailbin.errors import (
    DegenerateTailError,
    DomainError,
    InsufficientDataError,
    InsufficientTailError,
)
from tailbin.numerics import make_rng_stream
from tailbin.tail_index import (
    hill_estimate,
    loglog_points,
    rank_half_estimate,
    select_threshold,
)


def _pareto(alpha: float, n: int, seed: int) -> np.ndarray:
    """Exact Pareto(alpha) draws on [1, inf) by inversion of stream uniforms."""
    u = make_rng_stream(seed, 0).uniforms(n)
    return u ** (-1.0 / alpha)


class TestSelectThreshold:
    def test_on_integers(self):
        xs = np.arange(1.0, 101.0)
        assert select_threshold(xs, 0.90) == pytest.approx(90.1)
        assert select_threshold(xs, 0.975) == pytest.approx(97.525)

    def test_median_of_shifted_symmetric(self):
        xs = np.arange(-5.0, 6.0) + 10.0  # {5..15}
        assert select_threshold(xs, 0.5) == pytest.approx(np.median(xs))

    def test_too_few_observations(self):
        with pytest.raises(InsufficientDataError):
            select_threshold(np.arange(1.0, 10.0), 0.9)


class TestHillEstimate:
    def test_inverse_mean_of_excesses(self):
        # Excess logs with mean 0.5 give alpha = 2 exactly.
        xs = np.exp(np.array([0.25, 0.50, 0.75])) * 3.0
        est = hill_estimate(np.concatenate([[0.1, 0.2], xs]), 3.0)
        assert est.alpha_hat == pytest.approx(2.0, abs=1e-12)
        assert est.k == 3

    def test_pareto_monte_carlo(self):
        xs = _pareto(2.0, 100_000, seed=11)
        thr = select_threshold(xs, 0.90)
        est = hill_estimate(xs, thr)
        assert est.alpha_hat == pytest.approx(2.0, abs=0.07)

    def test_se_formula(self):
        xs = _pareto(1.0, 5_000, seed=12)
        est = hill_estimate(xs, select_threshold(xs, 0.98))
        assert est.se == pytest.approx(est.alpha_hat / np.sqrt(est.k), rel=1e-12)

    def test_errors(self):
        with pytest.raises(InsufficientTailError):
            hill_estimate([1.0, 1.0, 5.0, 6.0], 5.0)
        with pytest.raises(DomainError):
            hill_estimate([1.0, 2.0, 3.0], -1.0)
        with pytest.raises(DegenerateTailError):
            hill_estimate([2.0, 2.0, 2.0, 2.0], 2.0)


class TestRankHalfEstimate:
    def test_exact_points_on_regression_line(self):
        # x_(r) = ((r - 1/2)/k)^(-1/2) makes log(rank - 1/2) exactly linear
        # in log x with slope -2.
        k = 50
        r = np.arange(1, k + 1)
        xs = ((r - 0.5) / k) ** -0.5
        est = rank_half_estimate(xs, xs.min())
        assert est.alpha_hat == pytest.approx(2.0, abs=1e-9)

    def test_pareto_monte_carlo(self):
        xs = _pareto(1.0, 100_000, seed=13)
        est = rank_half_estimate(xs, select_threshold(xs, 0.975))
        assert est.alpha_hat == pytest.approx(1.0, abs=0.09)

    def test_se_formula(self):
        k = 50
        r = np.arange(1, k + 1)
        xs = ((r - 0.5) / k) ** -0.5
        est = rank_half_estimate(xs, xs.min())
        assert est.se == pytest.approx(2.0 * np.sqrt(2.0 / 50.0), abs=1e-6)

    def test_errors(self):
        with pytest.raises(InsufficientTailError):
            rank_half_estimate([0.5, 3.0, 4.0], 2.0)
        with pytest.raises(DegenerateTailError):
            rank_half_estimate([7.0, 7.0, 7.0], 7.0)


class TestLoglogPoints:
    def test_two_points(self):
        pts = loglog_points([1.0, np.e])
        assert pts[0] == pytest.approx([0.0, np.log(0.75)])
        assert pts[1] == pytest.approx([1.0, np.log(0.25)])

    def test_pareto_slope_near_minus_alpha(self):
        xs = _pareto(1.0, 50_000, seed=14)
        pts = loglog_points(xs)
        top = pts[int(0.9 * len(pts)):]
        slope = np.polyfit(top[:, 0], top[:, 1], 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.1)

    def test_constant_sample_stacks_vertically(self):
        pts = loglog_points([3.0] * 5)
        assert np.allclose(pts[:, 0], np.log(3.0))
        assert np.unique(pts[:, 1]).size == 5

    def test_rejects_nonpositive(self):
        with pytest.raises(DomainError):
            loglog_points([1.0, 0.0, 2.0])


class TestScaleEquivariance:
    @settings(max_examples=20, deadline=None)
    @given(st.floats(min_value=0.01, max_value=1e6), st.integers(min_value=0, max_value=2**31 - 1))
    def test_hill_and_rank_half_scale_invariant(self, c, seed):
        xs = _pareto(1.5, 2_000, seed=seed)
        thr = select_threshold(xs, 0.95)
        h0 = hill_estimate(xs, thr)
        h1 = hill_estimate(xs * c, thr * c)
        assert h1.alpha_hat == pytest.approx(h0.alpha_hat, rel=1e-9)
        r0 = rank_half_estimate(xs, thr)
        r1 = rank_half_estimate(xs * c, thr * c)
        assert r1.alpha_hat == pytest.approx(r0.alpha_hat, rel=1e-9)

    def test_both_estimators_within_three_se_on_pareto(self):
        xs = _pareto(2.0, 50_000, seed=15)
        thr = select_threshold(xs, 0.95)
        for est in (hill_estimate(xs, thr), rank_half_estimate(xs, thr)):
            assert abs(est.alpha_hat - 2.0) <= 3.0 * est.se
