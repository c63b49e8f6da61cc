"""Comparison estimators: plain logistic fits and local smoothers.

These are the benchmarks the tail estimators are evaluated against:
logistic regression of y on (1, x) over all observations or over
class-wise upper tails (each outcome class kept from its own quantile
cutoff upward), the panel analogues (delegated to the fixed-effects
fitter with raw-x regressors), and Gaussian-kernel local linear / local
logistic probability estimates with a Silverman default bandwidth.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .cs_model import CrossSection
from .errors import (
    DegenerateDataError,
    DegenerateDesignError,
    DegenerateOutcomeError,
    EffectiveSampleError,
    InsufficientDataError,
    InvalidParameterError,
)
from .numerics import empirical_quantile, maximize_concave
from .panel_model import FeFit, PanelData, fit_panel_fe

_BETA_CAP = 50.0

LocalLogitResult = namedtuple("LocalLogitResult", ["p", "separation", "converged"])


@dataclass
class KernelSpec:
    """Gaussian product kernel with one bandwidth per conditioning dim."""

    h: np.ndarray
    kernel: str = field(default="gaussian")

    def __post_init__(self) -> None:
        self.h = np.atleast_1d(np.asarray(self.h, dtype=float))
        if self.kernel != "gaussian":
            raise InvalidParameterError(f"unsupported kernel {self.kernel!r}")
        if np.any(self.h <= 0.0) or not np.all(np.isfinite(self.h)):
            raise InvalidParameterError("bandwidths must be positive and finite")

    def weights(self, diffs: np.ndarray) -> np.ndarray:
        """Product of standard normal densities of diffs/h, row-wise."""
        u = np.atleast_2d(diffs) / self.h
        return np.exp(-0.5 * np.sum(u * u, axis=1)) / (
            (2.0 * math.pi) ** (self.h.size / 2.0)
        )


@dataclass
class LogitFit:
    beta: np.ndarray
    cov: np.ndarray
    subset: str
    converged: bool
    separation: bool = field(default=False)
    # subset="tail": (class-0 cutoff, class-1 cutoff), each class kept from
    # its own q-quantile upward.
    thresholds_by_class: tuple | None = field(default=None)

    def predict(self, x) -> np.ndarray | float:
        """P(y=1 | x) from the fitted index, clamped to the open interval."""
        x_arr = np.asarray(x, dtype=float)
        eta = self.beta[0] + self.beta[1] * x_arr if self.beta.size > 1 else self.beta[0]
        p = np.clip(expit(eta), 1e-12, 1.0 - 1e-12)
        return float(p) if x_arr.ndim == 0 else p


def silverman_bandwidth(values) -> float:
    """Rule-of-thumb bandwidth 1.06 * sample SD * n^(-1/5)."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size < 2:
        raise InsufficientDataError("bandwidth needs at least 2 values")
    sd = float(np.std(v, ddof=1))
    if sd == 0.0:
        raise DegenerateDataError("values have zero sample standard deviation")
    return 1.06 * sd * v.size ** (-0.2)


def logistic_newton_parts(beta: np.ndarray, design: np.ndarray, y: np.ndarray, w=None):
    """Weighted logistic log-likelihood with score and hessian."""
    eta = design @ beta
    wts = np.ones_like(eta) if w is None else w
    f = float(np.sum(wts * (y * eta - np.logaddexp(0.0, eta))))
    p = expit(eta)
    grad = design.T @ (wts * (y - p))
    curve = wts * p * (1.0 - p)
    hess = -(design * curve[:, None]).T @ design
    return f, grad, hess


def _column_separated(design: np.ndarray, y: np.ndarray, w) -> bool:
    """Exact per-column perfect-separation check over positive-weight rows.

    Sufficient in one regressor dimension; oblique separation across
    several conditioning columns is left to the coefficient cap.
    """
    eff = np.ones(y.size, dtype=bool) if w is None else (np.asarray(w) > 0.0)
    ones = eff & (y == 1.0)
    zeros = eff & (y == 0.0)
    if not (np.any(ones) and np.any(zeros)):
        return True
    for j in range(1, design.shape[1]):
        col = design[:, j]
        if col[ones].min() >= col[zeros].max() or col[ones].max() <= col[zeros].min():
            return True
    return False


def _logistic_mle(design: np.ndarray, y: np.ndarray, w=None):
    """Newton MLE with a coefficient cap marking (quasi-)separation."""
    res = maximize_concave(
        lambda b: logistic_newton_parts(b, design, y, w), np.zeros(design.shape[1])
    )
    beta = res.argmax
    separation = bool(np.max(np.abs(beta)) > _BETA_CAP) or _column_separated(
        design, y, w
    )
    peak = float(np.max(np.abs(beta)))
    if peak > _BETA_CAP:
        # Scale the whole vector: a separated likelihood climbs along a ray,
        # and coordinate-wise clipping would move the decision boundary.
        beta = beta * (_BETA_CAP / peak)
    _, _, hess = logistic_newton_parts(beta, design, y, w)
    cov = np.linalg.pinv(-hess)
    converged = res.converged and not separation
    return beta, cov, converged, separation


def class_tail_thresholds(y: np.ndarray, x: np.ndarray, q: float) -> tuple:
    """Per-outcome-class tail cutoffs: the q-quantile of x within each class.

    Restricting each class to its own upper tail (rather than both to a
    pooled cutoff) is what makes the tail-only logistic benchmark behave
    the way it does: the two classes occupy largely disjoint x-ranges, so
    the fit is steep and often quasi-separated.
    """
    if not (0.0 < q < 1.0):
        raise InvalidParameterError("tail quantile q must lie in (0, 1)")
    if not (np.any(y == 1) and np.any(y == 0)):
        raise DegenerateOutcomeError("both outcome classes are needed for class cutoffs")
    thr0 = float(empirical_quantile(x[y == 0], q))
    thr1 = float(empirical_quantile(x[y == 1], q))
    return thr0, thr1


def fit_logit_cs(data: CrossSection, subset: str = "all", q: float | None = None) -> LogitFit:
    """Logistic regression of y on (1, x), on all rows or class-wise tails.

    subset="tail" keeps each outcome class from its own q-quantile of x
    upward. Perfectly separated samples come back with coefficients
    scaled down to a peak magnitude of 50 and the separation flag set
    rather than an error.
    """
    if subset not in ("all", "tail"):
        raise InvalidParameterError(f"unknown subset {subset!r}")
    thresholds = None
    if subset == "tail":
        if q is None:
            raise InvalidParameterError("subset='tail' needs a tail quantile q in (0, 1)")
        thresholds = class_tail_thresholds(data.y, data.x, q)
        mask = np.where(data.y == 1, data.x >= thresholds[1], data.x >= thresholds[0])
    else:
        mask = np.ones(data.n, dtype=bool)
    y_sub = data.y[mask].astype(float)
    x_sub = data.x[mask]
    if y_sub.size == 0 or np.all(y_sub == y_sub[0]):
        raise DegenerateOutcomeError("estimation subset contains a single outcome class")
    design = np.column_stack([np.ones(x_sub.size), x_sub])
    beta, cov, converged, separation = _logistic_mle(design, y_sub)
    return LogitFit(
        beta=beta,
        cov=cov,
        subset=subset,
        converged=converged,
        separation=separation,
        thresholds_by_class=thresholds,
    )


def fit_logit_panel(
    panel: PanelData,
    q: float,
    subset: str = "all",
    correction: str = "none",
) -> FeFit:
    """Panel logit with unit effects on raw x; thin wrapper over the FE fit.

    subset="tail" pools observed (unit, period) cells, computes the
    class-wise tail cutoffs, and hands them to the FE fitter.
    """
    if subset not in ("all", "tail"):
        raise InvalidParameterError(f"unknown subset {subset!r}")
    if subset == "all":
        return fit_panel_fe(panel, q, transform="raw_all", correction=correction)
    obs = panel.observed
    thresholds = class_tail_thresholds(panel.y[obs], panel.x[obs], q)
    return fit_panel_fe(
        panel, q, transform="raw_tail", correction=correction,
        class_thresholds=thresholds,
    )


def _local_design(x, x0, cond_values, cond_point, h):
    x = np.asarray(x, dtype=float).ravel()
    cols = [x - float(x0)]
    if cond_values is not None:
        cv = np.atleast_2d(np.asarray(cond_values, dtype=float))
        if cv.shape[0] != x.size:
            cv = cv.T
        cp = np.atleast_1d(np.asarray(cond_point, dtype=float))
        if cv.shape[1] != cp.size:
            raise InvalidParameterError("cond_point length must match cond_values columns")
        cols.extend((cv[:, j] - cp[j]) for j in range(cv.shape[1]))
    diffs = np.column_stack(cols)
    spec = KernelSpec(h=np.broadcast_to(np.atleast_1d(np.asarray(h, dtype=float)),
                                        (diffs.shape[1],)))
    weights = spec.weights(diffs)
    design = np.column_stack([np.ones(x.size), diffs])
    return design, weights


def local_linear(y, x, x0, h, cond_values=None, cond_point=None) -> float:
    """Kernel-weighted linear probability estimate at x0 (and cond_point).

    Weighted least squares of y on (1, x - x0, V - v0); the fitted
    intercept is the estimate, clamped to [0, 1].
    """
    y = np.asarray(y, dtype=float).ravel()
    design, weights = _local_design(x, x0, cond_values, cond_point, h)
    if float(np.sum(weights)) <= 1e-10:
        raise EffectiveSampleError("kernel mass at the evaluation point is numerically zero")
    xw = design * weights[:, None]
    try:
        coef = np.linalg.solve(xw.T @ design, xw.T @ y)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDesignError("weighted design is singular") from exc
    if not np.all(np.isfinite(coef)):
        raise DegenerateDesignError("weighted design is numerically singular")
    return float(min(max(coef[0], 0.0), 1.0))


def local_logit(y, x, x0, h, cond_values=None, cond_point=None) -> LocalLogitResult:
    """Kernel-weighted logistic probability estimate at x0 (and cond_point).

    Newton on the weighted log-likelihood in (b0, b1 [, b2]); the
    estimate is logistic(b0). Locally separated samples return a capped
    result with the separation flag instead of failing.
    """
    y = np.asarray(y, dtype=float).ravel()
    design, weights = _local_design(x, x0, cond_values, cond_point, h)
    if float(np.sum(weights)) <= 1e-10:
        raise EffectiveSampleError("kernel mass at the evaluation point is numerically zero")
    mass1 = float(np.sum(weights[y == 1.0]))
    mass0 = float(np.sum(weights[y == 0.0]))
    if mass1 == 0.0 or mass0 == 0.0:
        raise EffectiveSampleError("an outcome class carries zero kernel mass")
    beta, _, converged, separation = _logistic_mle(design, y, w=weights)
    return LocalLogitResult(
        p=float(expit(beta[0])), separation=separation, converged=converged
    )


def cre_condition(panel: PanelData) -> np.ndarray:
    """Per-unit sum of observed x, the correlated-random-effects control."""
    x = np.where(panel.observed, panel.x, 0.0)
    return x.sum(axis=1)
