"""Cross-sectional tail estimation for binary outcomes.

For each outcome class y the upper tail of x is approximated by a Pareto
law whose exponent is a linear index z'theta_y, fitted by pseudo-MLE over
the observations above that class's tail threshold:

    max_theta  sum_tail [ log(z_i'theta) - (z_i'theta) * log(x_i / thr_y) ]

subject to z'theta > 0 on the sample (a convex cone). Combining the two
class fits through Bayes' rule gives a plug-in conditional probability,
an elasticity of the outcome-variance term, and partial effects.
"""

from __future__ import annotations

import math
from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConeViolationError,
    DegenerateOutcomeError,
    DegenerateVarianceError,
    InfeasibleInitError,
    InsufficientTailError,
    InvalidParameterError,
)
from .numerics import (
    FD_STEP,
    ConeConstraint,
    empirical_quantile,
    maximize_concave,
)
from .tail_index import hill_estimate, rank_half_estimate

ElasticityEstimate = namedtuple("ElasticityEstimate", ["value", "se"])

_PROB_CLAMP = 1e-12


@dataclass
class CrossSection:
    """Observations (y in {0,1}, x > 0, z in R^dZ) for cross-sectional fits.

    A constant-1 column in z represents the no-covariate case.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.y = np.asarray(self.y).astype(int).ravel()
        self.x = np.asarray(self.x, dtype=float).ravel()
        if self.z is None:
            self.z = np.ones((self.y.size, 1))
        self.z = np.atleast_2d(np.asarray(self.z, dtype=float))
        if self.z.shape[0] != self.y.size:
            self.z = self.z.T
        n = self.y.size
        if not (self.x.size == n and self.z.shape[0] == n):
            raise InvalidParameterError("y, x, z must have matching lengths")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise InvalidParameterError("y must be binary 0/1")
        if np.any(self.x <= 0.0):
            raise InvalidParameterError("x must be strictly positive")
        if not (np.any(self.y == 0) and np.any(self.y == 1)):
            raise DegenerateOutcomeError("both outcome values must be present")

    @property
    def n(self) -> int:
        return int(self.y.size)

    @property
    def d_z(self) -> int:
        return int(self.z.shape[1])


@dataclass
class TailProbModel:
    """Logistic index models for P(Y=y, X >= thr_y | Z=z), one per class.

    For a constant-z design the coefficients reduce exactly to the sample
    frequencies: logistic(z'beta_y) = N_tail^(y) / N.
    """

    beta0: np.ndarray
    beta1: np.ndarray

    def prob(self, y: int, z: np.ndarray) -> float:
        beta = self.beta1 if y == 1 else self.beta0
        eta = float(np.dot(np.asarray(z, dtype=float).ravel(), beta))
        return 1.0 / (1.0 + math.exp(-eta))


@dataclass
class CsFit:
    theta0: np.ndarray
    theta1: np.ndarray
    cov0: np.ndarray
    cov1: np.ndarray
    thresholds: tuple[float, float]
    tail_counts: tuple[int, int]
    tailprob_model: TailProbModel
    method: str
    converged: bool
    n_obs: int = field(default=0)

    def alpha(self, y: int, z) -> float:
        theta = self.theta1 if y == 1 else self.theta0
        return float(np.dot(np.asarray(z, dtype=float).ravel(), theta))


def _constant_column(z: np.ndarray) -> int | None:
    """Index of a nonzero constant column of z, or None."""
    for j in range(z.shape[1]):
        col = z[:, j]
        if col[0] != 0.0 and np.all(col == col[0]):
            return j
    return None


def tail_objective_parts(theta: np.ndarray, z_tail: np.ndarray, log_excess: np.ndarray):
    """Objective, gradient, and hessian of the tail pseudo-likelihood.

    f(theta) = sum [ log(m_i) - m_i * le_i ],  m_i = z_i'theta
    grad     = sum [ (1/m_i - le_i) z_i ]
    hess     = -sum [ z_i z_i' / m_i^2 ]
    """
    m = z_tail @ theta
    if np.any(m <= 0.0):
        return -np.inf, np.zeros_like(theta), -np.eye(theta.size)
    f = float(np.sum(np.log(m) - m * log_excess))
    grad = z_tail.T @ (1.0 / m - log_excess)
    hess = -(z_tail / (m * m)[:, None]).T @ z_tail
    return f, grad, hess


def _fit_logistic_index(design: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Plain logistic MLE of target on design via the concave maximizer."""

    def fgh(beta):
        eta = design @ beta
        f = float(np.sum(target * eta - np.logaddexp(0.0, eta)))
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = design.T @ (target - p)
        w = p * (1.0 - p)
        hess = -(design * w[:, None]).T @ design
        return f, grad, hess

    res = maximize_concave(fgh, np.zeros(design.shape[1]), max_iter=100)
    return res.argmax


def _fit_tailprob_model(data: CrossSection, thresholds: tuple[float, float]) -> TailProbModel:
    betas = []
    const_j = _constant_column(data.z)
    for y in (0, 1):
        indicator = ((data.y == y) & (data.x >= thresholds[y])).astype(float)
        if const_j is not None and data.d_z == 1:
            # Intercept-only model: closed form keeps the frequency exact.
            share = float(indicator.mean())
            share = min(max(share, _PROB_CLAMP), 1.0 - _PROB_CLAMP)
            beta = np.zeros(1)
            beta[0] = math.log(share / (1.0 - share)) / data.z[0, const_j]
            betas.append(beta)
        else:
            betas.append(_fit_logistic_index(data.z, indicator))
    return TailProbModel(beta0=betas[0], beta1=betas[1])


def fit_cs_tail(data: CrossSection, q: float, method: str = "mle") -> CsFit:
    """Fit per-class tail exponents at the q-quantile thresholds.

    Each class's threshold is the empirical q-quantile of its own x
    subsample, and the tail set is the closed comparison x >= threshold.
    method "mle" fits the linear-index pseudo-likelihood; "hill" and
    "rank_half" require a single constant-z column and delegate to the
    classic estimators. Covariances come from the inverse negative
    hessian at the optimum.
    """
    if not (0.0 < q < 1.0):
        raise InvalidParameterError("tail quantile q must lie in (0, 1)")
    if method not in ("mle", "hill", "rank_half"):
        raise InvalidParameterError(f"unknown method {method!r}")

    d = data.d_z
    min_tail = max(10, 3 * d)
    const_j = _constant_column(data.z)

    thetas: list[np.ndarray] = []
    covs: list[np.ndarray] = []
    thresholds: list[float] = []
    counts: list[int] = []
    converged = True

    for y in (0, 1):
        sub_x = data.x[data.y == y]
        sub_z = data.z[data.y == y]
        thr = empirical_quantile(sub_x, q)
        tail = sub_x >= thr
        k = int(np.sum(tail))
        if k < min_tail:
            raise InsufficientTailError(
                f"class y={y} has {k} tail observations; needs at least {min_tail}"
            )
        thresholds.append(float(thr))
        counts.append(k)

        if method in ("hill", "rank_half"):
            if const_j is None or d != 1:
                raise InvalidParameterError(
                    f"method {method!r} requires a single constant-z column"
                )
            c = data.z[0, const_j]
            est = (hill_estimate if method == "hill" else rank_half_estimate)(sub_x, thr)
            thetas.append(np.array([est.alpha_hat / c]))
            covs.append(np.array([[(est.se / c) ** 2]]))
            continue

        z_tail = sub_z[tail]
        log_excess = np.log(sub_x[tail] / thr)
        cone = ConeConstraint(rows=data.z)
        init = _initial_theta(data, sub_x, thr, const_j, cone)
        res = maximize_concave(
            lambda t: tail_objective_parts(t, z_tail, log_excess), init, cone=cone
        )
        converged = converged and res.converged
        thetas.append(res.argmax)
        covs.append(np.linalg.inv(-res.hessian_at_opt))

    return CsFit(
        theta0=thetas[0],
        theta1=thetas[1],
        cov0=covs[0],
        cov1=covs[1],
        thresholds=(thresholds[0], thresholds[1]),
        tail_counts=(counts[0], counts[1]),
        tailprob_model=_fit_tailprob_model(data, (thresholds[0], thresholds[1])),
        method=method,
        converged=converged,
        n_obs=data.n,
    )


def _initial_theta(data, sub_x, thr, const_j, cone) -> np.ndarray:
    """Hill value on the constant column, zeros elsewhere, slack-feasible."""
    alpha0 = hill_estimate(sub_x, thr).alpha_hat
    init = np.zeros(data.d_z)
    if const_j is not None:
        init[const_j] = alpha0 / data.z[0, const_j]
    else:
        # No constant column: least-squares index matching the Hill level.
        init, *_ = np.linalg.lstsq(data.z, np.full(data.n, alpha0), rcond=None)
    if not cone.feasible(init):
        raise InfeasibleInitError("initial tail index is not cone-feasible on the sample")
    return init


def predict_prob_cs(fit: CsFit, x: float, z) -> float:
    """Plug-in conditional probability of y=1 at (x, z).

    pi-hat = 1 / (1 + R(z) * (a0/a1) * thr0^a0 / thr1^a1 * x^(a1-a0)),
    with a_y = z'theta_y and R the ratio of fitted class-tail probabilities.
    Clamped to (1e-12, 1 - 1e-12).
    """
    if x <= 0.0:
        raise InvalidParameterError("x must be strictly positive")
    z_arr = np.asarray(z, dtype=float).ravel()
    a0 = fit.alpha(0, z_arr)
    a1 = fit.alpha(1, z_arr)
    if a0 <= 0.0 or a1 <= 0.0:
        raise ConeViolationError("z'theta must be positive for both classes")
    p0 = fit.tailprob_model.prob(0, z_arr)
    p1 = fit.tailprob_model.prob(1, z_arr)
    thr0, thr1 = fit.thresholds
    log_ratio = (
        math.log(p0 / p1)
        + math.log(a0 / a1)
        + a0 * math.log(thr0)
        - a1 * math.log(thr1)
        + (a1 - a0) * math.log(x)
    )
    # Work in logs so extreme x cannot overflow the power terms.
    if log_ratio > 700.0:
        return _PROB_CLAMP
    pi = 1.0 / (1.0 + math.exp(log_ratio))
    return min(max(pi, _PROB_CLAMP), 1.0 - _PROB_CLAMP)


def extreme_elasticity_cs(fit: CsFit, z) -> ElasticityEstimate:
    """Limit elasticity -|z'(theta1 - theta0)| with its delta-method se.

    The class fits are asymptotically independent, so the index variance
    is z'(cov0 + cov1)z and the absolute value contributes only a sign.
    """
    z_arr = np.asarray(z, dtype=float).ravel()
    diff = float(z_arr @ (fit.theta1 - fit.theta0))
    var = float(z_arr @ (fit.cov0 + fit.cov1) @ z_arr)
    return ElasticityEstimate(value=-abs(diff), se=math.sqrt(max(var, 0.0)))


def elasticity_numeric(prob_fn, x: float) -> float:
    """Elasticity of pi(1-pi) with respect to x by central differences."""
    if x <= 0.0:
        raise InvalidParameterError("x must be strictly positive")
    h = FD_STEP * max(abs(x), 1.0)

    def g(v: float) -> float:
        p = prob_fn(v)
        return p * (1.0 - p)

    center = g(x)
    if center < 1e-12:
        raise DegenerateVarianceError("pi(1-pi) vanished at the evaluation point")
    return (g(x + h) - g(x - h)) / (2.0 * h) * x / center


def partial_effect(prob_fn, x: float) -> float:
    """Central-difference derivative of the probability at x."""
    h = FD_STEP * max(abs(x), 1.0)
    return (prob_fn(x + h) - prob_fn(x - h)) / (2.0 * h)


def tail_avg_partial_effect(fit: CsFit, data: CrossSection, x_lower: float) -> float:
    """Average of partial effects of the plug-in probability over x >= x_lower."""
    mask = data.x >= x_lower
    if int(np.sum(mask)) < 10:
        raise InsufficientTailError(
            f"tail average needs at least 10 observations above {x_lower}, got {int(np.sum(mask))}"
        )
    idx = np.flatnonzero(mask)
    effects = [
        partial_effect(lambda v, zi=data.z[i]: predict_prob_cs(fit, v, zi), float(data.x[i]))
        for i in idx
    ]
    return float(np.mean(effects))


@dataclass
class TailShareDiagnostic:
    observed: dict[int, float]
    xi_hat: dict[int, float] | None
    note: str


def tail_share_diagnostic(data: CrossSection, fit: CsFit) -> TailShareDiagnostic:
    """Observed per-class tail shares N_tail^(y)/N, as a sanity report.

    For the constant-z case the share is also the sample analog of the
    theoretical tail-probability sequence.
    """
    shares = {}
    for y in (0, 1):
        thr = fit.thresholds[y]
        shares[y] = float(np.mean((data.y == y) & (data.x >= thr)))
    note = ""
    if shares[0] == 0.0 and shares[1] == 0.0:
        note = "warning: no observations at or above either threshold"
    xi_hat = dict(shares) if _constant_column(data.z) is not None else None
    return TailShareDiagnostic(observed=shares, xi_hat=xi_hat, note=note)
