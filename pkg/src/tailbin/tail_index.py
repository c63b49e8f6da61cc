"""Tail-index estimation and heavy-tail diagnostics.

Threshold selection by empirical quantile, the Hill estimator (inverse
mean of log excesses), the rank-1/2 regression estimator, and log-log
survival plot data. Tail membership is always the closed comparison
x >= threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateTailError,
    DomainError,
    InsufficientDataError,
    InsufficientTailError,
)
from .numerics import empirical_quantile


@dataclass
class TailSample:
    """Log excesses over a threshold: log(x_i / threshold) for x_i >= threshold."""

    threshold: float
    excess_logs: np.ndarray
    k: int


@dataclass
class TailIndexEstimate:
    alpha_hat: float
    se: float
    k: int
    method: str  # "hill" or "rank_half"


def select_threshold(xs, q: float) -> float:
    """Empirical quantile of xs at q, used as the lower tail cutoff."""
    arr = np.asarray(xs, dtype=float).ravel()
    if arr.size < 10:
        raise InsufficientDataError(
            f"threshold selection needs at least 10 observations, got {arr.size}"
        )
    return empirical_quantile(arr, q)


def make_tail_sample(xs, threshold: float) -> TailSample:
    """Collect log excesses of the closed tail {x >= threshold}."""
    arr = np.asarray(xs, dtype=float).ravel()
    tail = arr[arr >= threshold]
    if np.any(tail <= 0.0) or threshold <= 0.0:
        raise DomainError("tail values and threshold must be strictly positive")
    logs = np.log(tail / threshold)
    return TailSample(threshold=float(threshold), excess_logs=logs, k=int(logs.size))


def hill_estimate(xs, threshold: float) -> TailIndexEstimate:
    """Hill estimator: alpha = k / sum(log excesses), se = alpha / sqrt(k)."""
    sample = make_tail_sample(xs, threshold)
    if sample.k < 3:
        raise InsufficientTailError(f"Hill estimation needs k >= 3 tail points, got {sample.k}")
    total = float(np.sum(sample.excess_logs))
    if total <= 0.0:
        raise DegenerateTailError("all tail values equal the threshold; log excesses sum to zero")
    alpha = sample.k / total
    return TailIndexEstimate(alpha_hat=alpha, se=alpha / np.sqrt(sample.k),
                             k=sample.k, method="hill")


def rank_half_estimate(xs, threshold: float) -> TailIndexEstimate:
    """Rank-1/2 estimator: OLS of log(rank - 1/2) on log(x) over the tail.

    The tail is sorted descending (rank 1 = largest; ties keep input order
    via a stable sort) and alpha is minus the OLS slope, with the
    asymptotic standard error alpha * sqrt(2/k).
    """
    arr = np.asarray(xs, dtype=float).ravel()
    tail = arr[arr >= threshold]
    if np.any(tail <= 0.0) or threshold <= 0.0:
        raise DomainError("tail values and threshold must be strictly positive")
    k = tail.size
    if k < 3:
        raise InsufficientTailError(f"rank-1/2 estimation needs k >= 3 tail points, got {k}")
    order = np.argsort(-tail, kind="stable")
    log_x = np.log(tail[order])
    log_rank = np.log(np.arange(1, k + 1) - 0.5)
    var = float(np.var(log_x))
    if var == 0.0:
        raise DegenerateTailError("no variation in log(x) over the tail")
    if np.unique(tail).size < 3:
        raise InsufficientTailError(
            f"rank-1/2 estimation needs at least 3 distinct tail values, got {np.unique(tail).size}"
        )
    slope = float(np.cov(log_x, log_rank, bias=True)[0, 1]) / var
    alpha = -slope
    return TailIndexEstimate(alpha_hat=alpha, se=alpha * np.sqrt(2.0 / k),
                             k=int(k), method="rank_half")


def loglog_points(xs) -> np.ndarray:
    """Survival plot data: (log x_(i), log((n - i + 1/2)/n)), sorted by log x.

    The plotting position (r - 1/2)/n matches the rank-1/2 estimator, so a
    fitted line through the tail of this plot has slope -alpha.
    """
    arr = np.asarray(xs, dtype=float).ravel()
    if np.any(arr <= 0.0):
        raise DomainError("log-log plot needs strictly positive values")
    n = arr.size
    srt = np.sort(arr)
    i = np.arange(1, n + 1)
    return np.column_stack([np.log(srt), np.log((n - i + 0.5) / n)])
