"""Forecast scoring and Monte Carlo aggregation.

Log predictive scores over matched unit forecasts, a paired score
difference test treating units as independent, and the bias / SD / RMSE
summary used for simulation tables.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import (
    AlignmentError,
    EmptyDataError,
    InsufficientDataError,
    InvalidParameterError,
)

_PROB_FLOOR = 1e-12

LpsResult = namedtuple("LpsResult", ["mean_lps", "sum_lps", "n"])
DiffTestResult = namedtuple(
    "DiffTestResult", ["mean_diff", "t", "p", "degenerate", "n"]
)
SummaryStats = namedtuple("SummaryStats", ["bias", "sd", "rmse"])


@dataclass
class ForecastSet:
    """One probability forecast and realized outcome per unit.

    Probabilities are clamped into (1e-12, 1 - 1e-12) on construction so
    every record has a finite score.
    """

    units: np.ndarray
    p_hat: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        self.units = np.asarray(self.units).ravel()
        self.p_hat = np.asarray(self.p_hat, dtype=float).ravel()
        self.y = np.asarray(self.y).astype(int).ravel()
        if not (self.units.size == self.p_hat.size == self.y.size):
            raise InvalidParameterError("units, p_hat, y must have matching lengths")
        if np.unique(self.units).size != self.units.size:
            raise InvalidParameterError("unit ids must be unique within a forecast set")
        if not np.all(np.isfinite(self.p_hat)):
            raise InvalidParameterError("forecast probabilities must be finite")
        if np.any(self.p_hat < 0.0) or np.any(self.p_hat > 1.0):
            raise InvalidParameterError("forecast probabilities must lie in [0, 1]")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise InvalidParameterError("realized outcomes must be binary 0/1")
        self.p_hat = np.clip(self.p_hat, _PROB_FLOOR, 1.0 - _PROB_FLOOR)

    @property
    def n(self) -> int:
        return int(self.units.size)

    def scores(self) -> np.ndarray:
        """Per-record log predictive score: log p if y=1 else log(1-p)."""
        return np.where(self.y == 1, np.log(self.p_hat), np.log1p(-self.p_hat))


def log_predictive_score(fs: ForecastSet) -> LpsResult:
    """Mean and summed log predictive score over a forecast set.

    Scores are summed in sorted order, so the result is exactly
    invariant to record order, and sum_lps is reconstituted as
    mean_lps * n so the two are exactly consistent.
    """
    if fs.n == 0:
        raise EmptyDataError("forecast set is empty")
    total = float(np.sum(np.sort(fs.scores())))
    mean = total / fs.n
    return LpsResult(mean_lps=mean, sum_lps=mean * fs.n, n=fs.n)


def _aligned_scores(a: ForecastSet, b: ForecastSet) -> np.ndarray:
    if a.n != b.n or not np.array_equal(np.sort(a.units), np.sort(b.units)):
        raise AlignmentError("forecast sets cover different units")
    order_a = np.argsort(a.units, kind="stable")
    order_b = np.argsort(b.units, kind="stable")
    return a.scores()[order_a] - b.scores()[order_b]


def lps_diff_test(a: ForecastSet, b: ForecastSet) -> DiffTestResult:
    """Paired test of score differences across matched units.

    d_i = score_a,i - score_b,i aligned by unit id; the t statistic is
    mean(d) / (sd(d)/sqrt(n)) with the two-sided p-value read off the
    standard normal. Zero-variance differences give a degenerate result
    with t and p undefined rather than an error.
    """
    d = _aligned_scores(a, b)
    if d.size < 10:
        raise InsufficientDataError("need at least 10 matched units")
    mean_diff = float(np.mean(d))
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        return DiffTestResult(
            mean_diff=mean_diff, t=float("nan"), p=float("nan"),
            degenerate=True, n=int(d.size),
        )
    t = mean_diff / (sd / np.sqrt(d.size))
    p = float(2.0 * norm.sf(abs(t)))
    return DiffTestResult(mean_diff=mean_diff, t=float(t), p=p,
                          degenerate=False, n=int(d.size))


def bias_sd_rmse(estimates, truth: float) -> SummaryStats:
    """Bias, population SD, and RMSE of estimates around a known truth.

    Population (n-denominator) SD keeps rmse^2 = bias^2 + sd^2 an exact
    identity.
    """
    e = np.asarray(estimates, dtype=float).ravel()
    if e.size == 0:
        raise EmptyDataError("no estimates to summarize")
    if not np.all(np.isfinite(e)):
        raise InvalidParameterError("estimates must be finite")
    errors = e - float(truth)
    bias = float(np.mean(errors))
    sd = float(np.std(errors))
    rmse = float(np.sqrt(np.mean(errors ** 2)))
    return SummaryStats(bias=bias, sd=sd, rmse=rmse)
