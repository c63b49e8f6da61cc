"""Panel estimators for binary outcomes with heavy-tailed covariates.

Four fitting strategies share one data container:

* fit_panel_conditional: small-T conditional MLE that conditions each
  unit's outcomes on their sum over tail periods, removing the unit
  effect (conditional-logit sufficiency). The per-period index is
  -(z_i'theta) * log x_it, so the conditional-logit coefficient on
  z*log x equals -theta.
* fit_panel_fe: large-T joint MLE of a common slope and unit intercepts
  for P(y=1) = logistic(A_i - r_it'theta), with an optional split-panel
  jackknife bias correction and per-unit forecasts.
* fit_panel_dynamic: state-dependent model estimated from 5-period
  all-tail windows whose outcome path matches one of four switching
  patterns; a multinomial logit in the three free parameter blocks.
* fit_panel_local: two-period conditional fit for time-varying unit
  covariates, kernel-weighting units by how close their two covariate
  vectors are.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .cs_model import partial_effect
from .errors import (
    EffectiveSampleError,
    FlatLikelihoodError,
    InsufficientDataError,
    InsufficientTailError,
    InvalidParameterError,
    MissingUnitError,
)
from .numerics import empirical_quantile, maximize_concave

_SEPARATION_BOUND = 40.0  # |A_i| beyond this marks a quasi-separated unit


@dataclass
class PanelData:
    """Rectangular panel with NaN marking unobserved cells.

    y and x are (units x periods); a cell is observed when both are
    finite, and the observed masks must agree. z holds one covariate
    vector per unit; z_t holds a per-period vector (used by the local
    fit). Either may be None.
    """

    ids: np.ndarray
    y: np.ndarray
    x: np.ndarray
    z: np.ndarray | None = None
    z_t: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids)
        self.y = np.asarray(self.y, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if self.y.ndim != 2 or self.x.shape != self.y.shape:
            raise InvalidParameterError("y and x must be matching units-by-periods arrays")
        if self.ids.size != self.y.shape[0]:
            raise InvalidParameterError("ids must have one entry per unit")
        if np.unique(self.ids).size != self.ids.size:
            raise InvalidParameterError("unit ids must be unique")
        obs_y = np.isfinite(self.y)
        obs_x = np.isfinite(self.x)
        if not np.array_equal(obs_y, obs_x):
            raise InvalidParameterError("y and x must be observed in the same cells")
        vals = self.y[obs_y]
        if not np.all((vals == 0.0) | (vals == 1.0)):
            raise InvalidParameterError("observed y must be binary 0/1")
        if np.any(self.x[obs_x] <= 0.0):
            raise InvalidParameterError("observed x must be strictly positive")
        if self.z is not None:
            self.z = np.atleast_2d(np.asarray(self.z, dtype=float))
            if self.z.shape[0] != self.n_units:
                self.z = self.z.T
            if self.z.shape[0] != self.n_units:
                raise InvalidParameterError("z must have one row per unit")
        if self.z_t is not None:
            self.z_t = np.asarray(self.z_t, dtype=float)
            if self.z_t.ndim == 2:
                self.z_t = self.z_t[:, :, None]
            if self.z_t.shape[:2] != self.y.shape:
                raise InvalidParameterError("z_t must be units x periods x dZ")

    @property
    def n_units(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_periods(self) -> int:
        return int(self.y.shape[1])

    @property
    def d_z(self) -> int:
        if self.z is not None:
            return int(self.z.shape[1])
        if self.z_t is not None:
            return int(self.z_t.shape[2])
        return 0

    @property
    def observed(self) -> np.ndarray:
        return np.isfinite(self.x)

    @classmethod
    def from_long(cls, units, times, y, x, z=None) -> "PanelData":
        """Build from long-format columns; z may vary by (unit, time).

        Unit order follows first appearance; period order follows the
        sorted distinct time values. Constant-within-unit z becomes the
        per-unit covariate, otherwise the per-period covariate.
        """
        units = np.asarray(units)
        times = np.asarray(times)
        y = np.asarray(y, dtype=float)
        x = np.asarray(x, dtype=float)
        if not (units.size == times.size == y.size == x.size):
            raise InvalidParameterError("long-format columns must share a length")
        if units.size == 0:
            raise InvalidParameterError("empty panel")
        uniq_units, first_pos = np.unique(units, return_index=True)
        uniq_units = uniq_units[np.argsort(first_pos)]
        uniq_times = np.unique(times)
        u_index = {u: i for i, u in enumerate(uniq_units)}
        t_index = {t: j for j, t in enumerate(uniq_times)}
        n, T = uniq_units.size, uniq_times.size
        y_mat = np.full((n, T), np.nan)
        x_mat = np.full((n, T), np.nan)
        rows_i = np.fromiter((u_index[u] for u in units), dtype=int, count=units.size)
        rows_j = np.fromiter((t_index[t] for t in times), dtype=int, count=times.size)
        if np.unique(rows_i * T + rows_j).size != units.size:
            raise InvalidParameterError("duplicate (unit, time) rows")
        y_mat[rows_i, rows_j] = y
        x_mat[rows_i, rows_j] = x
        z_const = None
        z_time = None
        if z is not None:
            z = np.atleast_2d(np.asarray(z, dtype=float))
            if z.shape[0] != units.size:
                z = z.T
            d = z.shape[1]
            z_time = np.full((n, T, d), np.nan)
            z_time[rows_i, rows_j] = z
            varies = False
            for i in range(n):
                rows = z_time[i][np.isfinite(z_time[i][:, 0])]
                if rows.shape[0] > 1 and not np.allclose(rows, rows[0], rtol=0.0, atol=0.0):
                    varies = True
                    break
            if not varies:
                z_const = np.vstack(
                    [z_time[i][np.isfinite(z_time[i][:, 0])][0] for i in range(n)]
                )
                z_time = None
        return cls(ids=uniq_units, y=y_mat, x=x_mat, z=z_const, z_t=z_time)


@dataclass
class PanelFit:
    theta_star: np.ndarray
    cov: np.ndarray
    threshold: float
    n_contributing: int
    converged: bool


@dataclass
class FeFit:
    theta_star: np.ndarray
    cov: np.ndarray
    a_tilde: dict
    correction: str
    dropped_units: list
    converged: bool
    threshold: float | None
    transform: str
    # raw_tail with class-wise selection: (class-0 cutoff, class-1 cutoff).
    class_thresholds: tuple | None = None


@dataclass
class DynFit:
    theta_01: np.ndarray
    theta_10: np.ndarray
    theta_11: np.ndarray
    cov: np.ndarray
    n_windows: int
    hessian_rank: int
    converged: bool
    threshold: float = field(default=float("nan"))
    # The no-switch transition parameter is the reference level, fixed at 0.
    theta_00_normalized: bool = field(default=True)


def pooled_threshold(panel: PanelData, q: float) -> float:
    if not (0.0 < q < 1.0):
        raise InvalidParameterError("tail quantile q must lie in (0, 1)")
    obs = panel.x[panel.observed]
    return float(empirical_quantile(obs, q))


# ---------------------------------------------------------------------------
# Small-T conditional MLE


@dataclass
class _CondUnit:
    G: np.ndarray  # (m, dZ) index coefficients, centered within unit
    y: np.ndarray  # (m,) outcomes over the unit's tail periods
    s: int  # sum of y, the conditioning statistic
    weight: float = 1.0


def _esym_log(log_u: np.ndarray) -> np.ndarray:
    """Logs of the elementary symmetric polynomials of exp(log_u).

    The e-poly recursion run in log space: every update is a sum of
    positive terms, so it becomes logaddexp and stays exact-to-rounding
    no matter how far apart the log_u values are.
    """
    le = np.full(log_u.size + 1, -np.inf)
    le[0] = 0.0
    for top, lv in enumerate(log_u, start=1):
        le[1:top + 1] = np.logaddexp(le[1:top + 1], lv + le[:top])
    return le


def conditional_objective_parts(theta: np.ndarray, units: list[_CondUnit]):
    """Log-likelihood, score, and hessian of the conditional fit.

    Each unit contributes log of the conditional probability of its
    outcome path given the path sum, a ratio of elementary symmetric
    polynomials in exp(eta_t). Gradients use inclusion probabilities;
    the hessian is minus the conditional covariance of the summed index
    coefficients. Every e-poly is built fresh from its own index subset
    in log space: deflating a shared polynomial cancels catastrophically
    once the tail x values span many orders of magnitude, which heavy
    tails routinely produce.
    """
    d = theta.size
    two_period = all(u.G.shape[0] == 2 and u.s == 1 for u in units)
    if two_period:
        return _two_period_parts(theta, units)

    f = 0.0
    grad = np.zeros(d)
    hess = np.zeros((d, d))
    for unit in units:
        eta = unit.G @ theta
        m = eta.size
        lden = _esym_log(eta)[unit.s]
        f += unit.weight * (float(eta @ unit.y) - lden)

        p = np.empty(m)
        for t in range(m):
            le_t = _esym_log(np.delete(eta, t))
            p[t] = math.exp(eta[t] + le_t[unit.s - 1] - lden)
        mean_vec = unit.G.T @ p
        grad += unit.weight * (unit.G.T @ (unit.y - p))

        # 2nd moment: joint inclusion probabilities, symmetric in (t, r).
        second = (unit.G * p[:, None]).T @ unit.G
        if unit.s >= 2:
            for t in range(m):
                for r in range(t):
                    le_tr = _esym_log(np.delete(eta, (t, r)))
                    q_tr = math.exp(eta[t] + eta[r] + le_tr[unit.s - 2] - lden)
                    cross = np.outer(unit.G[t], unit.G[r])
                    second += q_tr * (cross + cross.T)
        hess -= unit.weight * (second - np.outer(mean_vec, mean_vec))
    return f, grad, hess


def _two_period_parts(theta: np.ndarray, units: list[_CondUnit]):
    G1 = np.vstack([u.G[0] for u in units])
    G2 = np.vstack([u.G[1] for u in units])
    y1 = np.array([u.y[0] for u in units])
    wts = np.array([u.weight for u in units])
    eta1 = G1 @ theta
    eta2 = G2 @ theta
    p1 = expit(eta1 - eta2)
    f = float(np.sum(wts * (y1 * eta1 + (1.0 - y1) * eta2 - np.logaddexp(eta1, eta2))))
    D = G1 - G2
    grad = D.T @ (wts * (y1 - p1))
    w = wts * p1 * (1.0 - p1)
    hess = -(D * w[:, None]).T @ D
    return f, grad, hess


def _conditional_units(panel: PanelData, threshold: float) -> list[_CondUnit]:
    if panel.z is None:
        raise InvalidParameterError("conditional fit needs a per-unit covariate vector z")
    units = []
    obs = panel.observed
    for i in range(panel.n_units):
        tail = obs[i] & (panel.x[i] >= threshold)
        if int(np.sum(tail)) < 2:
            continue
        y_tail = panel.y[i, tail]
        if np.all(y_tail == y_tail[0]):
            continue
        G = -np.outer(np.log(panel.x[i, tail]), panel.z[i])
        G = G - G.mean(axis=0)  # common shifts cancel in the conditional law
        units.append(_CondUnit(G=G, y=y_tail, s=int(np.sum(y_tail))))
    return units


def fit_panel_conditional(panel: PanelData, q: float) -> PanelFit:
    """Conditional MLE of the common tail parameter from switching units.

    The threshold is the pooled q-quantile of all observed x. A unit
    contributes if it has at least two tail periods and its outcomes
    vary across them; inference conditions on the per-unit outcome sum.
    """
    threshold = pooled_threshold(panel, q)
    units = _conditional_units(panel, threshold)
    d = panel.d_z
    need = max(10, 3 * d)
    if len(units) < need:
        raise InsufficientTailError(
            f"{len(units)} contributing units; conditional fit needs at least {need}"
        )
    if all(np.allclose(u.G, 0.0) for u in units):
        raise FlatLikelihoodError("tail x values are constant within every contributing unit")
    res = maximize_concave(lambda t: conditional_objective_parts(t, units), np.zeros(d))
    cov = np.linalg.inv(-res.hessian_at_opt)
    return PanelFit(
        theta_star=res.argmax,
        cov=cov,
        threshold=threshold,
        n_contributing=len(units),
        converged=res.converged,
    )


# ---------------------------------------------------------------------------
# Large-T fixed-effects fit


@dataclass
class _FeRows:
    unit_pos: np.ndarray  # retained-unit index per estimation row
    R: np.ndarray  # (rows, d) slope regressors
    y: np.ndarray
    retained_ids: list
    dropped: list


def _fe_regressors(
    panel: PanelData,
    transform: str,
    threshold: float | None,
    class_thresholds: tuple | None = None,
):
    obs = panel.observed
    if transform == "log_tail":
        if panel.z is None:
            raise InvalidParameterError("log_tail transform needs per-unit z")
        keep = obs & (panel.x >= threshold)
    elif transform == "raw_all":
        keep = obs
    elif transform == "raw_tail":
        if class_thresholds is not None:
            thr0, thr1 = class_thresholds
            keep = obs & np.where(panel.y == 1, panel.x >= thr1, panel.x >= thr0)
        else:
            keep = obs & (panel.x >= threshold)
    else:
        raise InvalidParameterError(f"unknown transform {transform!r}")
    return keep


def _build_fe_rows(
    panel: PanelData, transform: str, threshold, exclude=(), class_thresholds=None
) -> _FeRows:
    keep = _fe_regressors(panel, transform, threshold, class_thresholds)
    unit_pos, blocks_r, blocks_y = [], [], []
    retained, dropped = [], []
    for i in range(panel.n_units):
        uid = panel.ids[i]
        if uid in exclude:
            dropped.append((uid, "separation"))
            continue
        mask = keep[i]
        y_i = panel.y[i, mask]
        if y_i.size < 2 or np.all(y_i == y_i[0]):
            dropped.append((uid, "no outcome variation"))
            continue
        if transform == "log_tail":
            r_i = np.outer(np.log(panel.x[i, mask]), panel.z[i])
        else:
            r_i = panel.x[i, mask][:, None]
        pos = len(retained)
        retained.append(uid)
        unit_pos.append(np.full(y_i.size, pos, dtype=int))
        blocks_r.append(r_i)
        blocks_y.append(y_i)
    if not retained:
        raise InsufficientDataError("no contributing units")
    return _FeRows(
        unit_pos=np.concatenate(unit_pos),
        R=np.vstack(blocks_r),
        y=np.concatenate(blocks_y),
        retained_ids=retained,
        dropped=dropped,
    )


def _solve_intercepts(rows: _FeRows, theta: np.ndarray, a_init: np.ndarray) -> np.ndarray:
    """Per-unit damped Newton for the intercepts at fixed slope.

    Each unit's problem is a strictly concave 1-D logistic likelihood, so
    monotone (backtracked) Newton steps converge; all units are advanced
    together with array ops.
    """
    n_units = len(rows.retained_ids)
    a = a_init.copy()
    off = rows.R @ theta

    def per_unit_obj(a_vec):
        m = a_vec[rows.unit_pos] - off
        vals = rows.y * m - np.logaddexp(0.0, m)
        return np.bincount(rows.unit_pos, weights=vals, minlength=n_units)

    for _ in range(100):
        m = a[rows.unit_pos] - off
        p = expit(m)
        g = np.bincount(rows.unit_pos, weights=rows.y - p, minlength=n_units)
        if np.max(np.abs(g)) < 1e-11:
            break
        w = np.bincount(rows.unit_pos, weights=p * (1.0 - p), minlength=n_units)
        step = np.clip(g / np.maximum(w, 1e-300), -10.0, 10.0)
        base = per_unit_obj(a)
        for _ in range(40):
            worse = per_unit_obj(a + step) < base - 1e-12
            if not np.any(worse):
                break
            step[worse] *= 0.5
        a = a + step
    return a


def fe_profile_parts(theta: np.ndarray, rows: _FeRows, a_state: np.ndarray):
    """Concentrated log-likelihood of the slope, with score and hessian.

    The intercepts are solved out at each slope value; the envelope
    theorem gives the score, and the hessian is the Schur complement of
    the intercept block (diagonal, so the correction is a rank-one sum
    per unit).
    """
    a = _solve_intercepts(rows, theta, a_state)
    a_state[:] = a
    m = a[rows.unit_pos] - rows.R @ theta
    p = expit(m)
    f = float(np.sum(rows.y * m - np.logaddexp(0.0, m)))
    grad = -rows.R.T @ (rows.y - p)
    w = p * (1.0 - p)
    h_tt = -(rows.R * w[:, None]).T @ rows.R
    n_units = len(rows.retained_ids)
    d = theta.size
    S = np.zeros((n_units, d))
    np.add.at(S, rows.unit_pos, rows.R * w[:, None])
    W = np.bincount(rows.unit_pos, weights=w, minlength=n_units)
    h_profile = h_tt + (S / np.maximum(W, 1e-300)[:, None]).T @ S
    return f, grad, h_profile


def _fit_fe_core(panel, transform, threshold, exclude=(), class_thresholds=None):
    rows = _build_fe_rows(
        panel, transform, threshold, exclude=exclude, class_thresholds=class_thresholds
    )
    d = rows.R.shape[1]
    n_units = len(rows.retained_ids)
    ybar = np.bincount(rows.unit_pos, weights=rows.y, minlength=n_units) / np.bincount(
        rows.unit_pos, minlength=n_units
    )
    a_state = np.log(ybar / (1.0 - ybar))
    res = maximize_concave(lambda t: fe_profile_parts(t, rows, a_state), np.zeros(d))
    a_final = _solve_intercepts(rows, res.argmax, a_state)
    return rows, res, a_final


def _period_slice(panel: PanelData, stop: int | None, start: int | None = None) -> PanelData:
    sl = slice(start, stop)
    return PanelData(
        ids=panel.ids,
        y=panel.y[:, sl],
        x=panel.x[:, sl],
        z=panel.z,
        z_t=None if panel.z_t is None else panel.z_t[:, sl],
    )


def fit_panel_fe(
    panel: PanelData,
    q: float,
    transform: str = "log_tail",
    correction: str = "none",
    class_thresholds: tuple | None = None,
) -> FeFit:
    """Joint MLE of unit intercepts and a common slope.

    P(y_it = 1) = logistic(A_i - r_it'theta) with r_it = z_i * log x_it
    on tail periods (log_tail) or r_it = x_it (raw_all / raw_tail).
    raw_tail selects either from a pooled cutoff or, when
    class_thresholds=(c0, c1) is given, each outcome class from its own
    cutoff. Units whose outcomes never vary inside the estimation window
    are dropped; units whose fitted intercept runs away are dropped as
    separated and the model is refit once. correction="jackknife"
    recombines half-panel fits as 2*full - mean(halves), sharing the
    full-sample cutoffs, and refits the intercepts at the corrected
    slope.
    """
    if correction not in ("none", "jackknife"):
        raise InvalidParameterError(f"unknown correction {correction!r}")
    if class_thresholds is not None and transform != "raw_tail":
        raise InvalidParameterError("class_thresholds applies only to transform='raw_tail'")
    if not (0.0 < q < 1.0):
        raise InvalidParameterError("tail quantile q must lie in (0, 1)")
    needs_pooled = transform != "raw_all" and class_thresholds is None
    threshold = pooled_threshold(panel, q) if needs_pooled else None

    rows, res, a_final = _fit_fe_core(panel, transform, threshold,
                                      class_thresholds=class_thresholds)
    bad = {
        uid
        for uid, a in zip(rows.retained_ids, a_final)
        if abs(a) > _SEPARATION_BOUND
    }
    if bad:
        rows, res, a_final = _fit_fe_core(panel, transform, threshold, exclude=bad,
                                          class_thresholds=class_thresholds)

    theta = res.argmax
    converged = res.converged
    if correction == "jackknife":
        T = panel.n_periods
        half = (T + 1) // 2  # odd T: the first half keeps the extra period
        _, res1, _ = _fit_fe_core(_period_slice(panel, half), transform, threshold,
                                  exclude=bad, class_thresholds=class_thresholds)
        _, res2, _ = _fit_fe_core(_period_slice(panel, None, half), transform, threshold,
                                  exclude=bad, class_thresholds=class_thresholds)
        theta = 2.0 * theta - 0.5 * (res1.argmax + res2.argmax)
        a_final = _solve_intercepts(rows, theta, a_final)
        converged = converged and res1.converged and res2.converged

    cov = np.linalg.inv(-res.hessian_at_opt)
    return FeFit(
        theta_star=theta,
        cov=cov,
        a_tilde={uid: float(a) for uid, a in zip(rows.retained_ids, a_final)},
        correction=correction,
        dropped_units=rows.dropped,
        converged=converged,
        threshold=threshold,
        transform=transform,
        class_thresholds=class_thresholds,
    )


def forecast_unit(fit: FeFit, unit_id, x_new: float, z) -> float:
    """Forecast P(y=1) for a retained unit at a new covariate level."""
    if unit_id not in fit.a_tilde:
        raise MissingUnitError(f"unit {unit_id!r} was not retained in the fit")
    if x_new <= 0.0:
        raise InvalidParameterError("x_new must be strictly positive")
    warn_cut = fit.threshold
    if warn_cut is None and fit.class_thresholds is not None:
        warn_cut = min(fit.class_thresholds)
    if warn_cut is not None and x_new < warn_cut:
        warnings.warn(
            f"x_new={x_new:g} lies below the tail threshold {warn_cut:g}; "
            "the fitted tail model is being extrapolated",
            UserWarning,
            stacklevel=2,
        )
    if fit.transform == "log_tail":
        r_new = np.asarray(z, dtype=float).ravel() * math.log(x_new)
    else:
        r_new = np.array([x_new])
    index = fit.a_tilde[unit_id] - float(r_new @ fit.theta_star)
    p = float(expit(index))
    return min(max(p, 1e-12), 1.0 - 1e-12)


def ape_panel(fit: FeFit, panel: PanelData, q: float) -> float:
    """Average derivative of the unit forecasts over tail observations."""
    threshold = fit.threshold if fit.threshold is not None else pooled_threshold(panel, q)
    obs = panel.observed
    id_to_pos = {uid: i for i, uid in enumerate(panel.ids)}
    effects = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        for uid in fit.a_tilde:
            i = id_to_pos[uid]
            tail = obs[i] & (panel.x[i] >= threshold)
            z_i = panel.z[i] if panel.z is not None else np.ones(1)
            for x_val in panel.x[i, tail]:
                effects.append(
                    partial_effect(
                        lambda v, u=uid, zz=z_i: forecast_unit(fit, u, v, zz), float(x_val)
                    )
                )
    if not effects:
        raise InsufficientTailError("no tail observations among retained units")
    return float(np.mean(effects))


def extreme_elasticity_panel(theta_star, z) -> float:
    """Limit elasticity of the outcome-variance term: -|z'theta_star|."""
    z_arr = np.asarray(z, dtype=float).ravel()
    t_arr = np.asarray(theta_star, dtype=float).ravel()
    return -abs(float(z_arr @ t_arr))


# ---------------------------------------------------------------------------
# Dynamic (state-dependent) fit

# Outcome paths over a 5-period window that identify the transition
# parameters; the first period is the conditioning origin and its x
# never enters the weights.
_DYN_EVENTS = (
    (0, 0, 1, 1, 0),
    (0, 1, 1, 0, 0),
    (1, 1, 0, 0, 1),
    (1, 0, 0, 1, 1),
)
# Per event: (period position, parameter block) pairs, blocks ordered
# (rise, fall, stay) = (theta_01, theta_10, theta_11).
_DYN_TERMS = (
    ((2, 0), (3, 2), (4, 1)),
    ((1, 0), (2, 2), (3, 1)),
    ((1, 2), (2, 1), (4, 0)),
    ((1, 1), (3, 0), (4, 2)),
)


def build_dynamic_windows(panel: PanelData, q: float):
    """Collect 5-period all-tail windows whose path matches an event.

    Returns (V, obs_idx, threshold): V is (windows, 4, 3*dZ) with the
    log-weight coefficient vector of each candidate event, obs_idx the
    observed event per window.
    """
    if panel.n_periods < 5:
        raise InvalidParameterError("dynamic fit requires at least five periods per window")
    if panel.z is None:
        raise InvalidParameterError("dynamic fit needs a per-unit covariate vector z")
    threshold = pooled_threshold(panel, q)
    d = panel.d_z
    obs = panel.observed
    v_rows, obs_idx = [], []
    event_index = {pat: e for e, pat in enumerate(_DYN_EVENTS)}
    for i in range(panel.n_units):
        for t0 in range(panel.n_periods - 4):
            win = slice(t0, t0 + 5)
            if not np.all(obs[i, win]):
                continue
            x_win = panel.x[i, win]
            if np.any(x_win < threshold):
                continue
            pattern = tuple(int(v) for v in panel.y[i, win])
            e_obs = event_index.get(pattern)
            if e_obs is None:
                continue
            log_x = np.log(x_win)
            V = np.zeros((4, 3 * d))
            for e, terms in enumerate(_DYN_TERMS):
                for pos, block in terms:
                    V[e, block * d : (block + 1) * d] = -log_x[pos] * panel.z[i]
            v_rows.append(V)
            obs_idx.append(e_obs)
    if not v_rows:
        raise InsufficientTailError("no contributing 5-period windows")
    return np.stack(v_rows), np.asarray(obs_idx), threshold


def _window_probs(scores: np.ndarray) -> np.ndarray:
    # Max-shifted softmax: equal scores yield probabilities of exactly 1/4.
    w = np.exp(scores - np.max(scores, axis=1, keepdims=True))
    return w / np.sum(w, axis=1, keepdims=True)


def dynamic_objective_parts(theta_stack: np.ndarray, V: np.ndarray, obs_idx: np.ndarray):
    """Multinomial log-likelihood over windows with score and hessian."""
    scores = V @ theta_stack  # (windows, 4)
    lse = logsumexp(scores, axis=1)
    f = float(np.sum(scores[np.arange(scores.shape[0]), obs_idx] - lse))
    pi = _window_probs(scores)
    v_obs = V[np.arange(V.shape[0]), obs_idx]
    v_bar = np.einsum("we,wek->wk", pi, V)
    grad = np.sum(v_obs - v_bar, axis=0)
    second = np.einsum("we,wek,wel->kl", pi, V, V)
    hess = -(second - v_bar.T @ v_bar)
    return f, grad, hess


def dynamic_event_probs(theta_stack: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Per-window probabilities of the four candidate events."""
    return _window_probs(V @ theta_stack)


def fit_panel_dynamic(panel: PanelData, q: float) -> DynFit:
    """Multinomial-logit fit of the transition parameters.

    The no-switch parameter is normalized to zero; the three free
    blocks (rise, fall, stay) are estimated jointly from all windows.
    """
    V, obs_idx, threshold = build_dynamic_windows(panel, q)
    d = panel.d_z
    need = max(20, 5 * d)
    if V.shape[0] < need:
        raise InsufficientTailError(
            f"{V.shape[0]} contributing windows; dynamic fit needs at least {need}"
        )
    spread = np.max(np.abs(V - V[:, :1, :]))
    if spread == 0.0:
        raise FlatLikelihoodError("x is constant within every contributing window")
    res = maximize_concave(
        lambda t: dynamic_objective_parts(t, V, obs_idx), np.zeros(3 * d)
    )
    neg_hess = -res.hessian_at_opt
    cov = np.linalg.pinv(neg_hess)
    rank = int(np.linalg.matrix_rank(neg_hess))
    theta = res.argmax
    return DynFit(
        theta_01=theta[0:d],
        theta_10=theta[d : 2 * d],
        theta_11=theta[2 * d : 3 * d],
        cov=cov,
        n_windows=int(V.shape[0]),
        hessian_rank=rank,
        converged=res.converged,
        threshold=threshold,
    )


# ---------------------------------------------------------------------------
# Local fit for time-varying unit covariates


def _local_pairs(panel: PanelData, threshold: float):
    """Earliest pair of tail periods with differing outcomes, per unit."""
    obs = panel.observed
    pairs = []
    for i in range(panel.n_units):
        tail_t = np.flatnonzero(obs[i] & (panel.x[i] >= threshold))
        if tail_t.size < 2:
            continue
        found = None
        for a in range(tail_t.size - 1):
            for b in range(a + 1, tail_t.size):
                if panel.y[i, tail_t[a]] != panel.y[i, tail_t[b]]:
                    found = (int(tail_t[a]), int(tail_t[b]))
                    break
            if found:
                break
        if found:
            pairs.append((i, found[0], found[1]))
    return pairs


def fit_panel_local(panel: PanelData, q: float, h="silverman") -> PanelFit:
    """Two-period conditional fit with kernel weights on covariate drift.

    Each switching unit contributes its earliest pair of tail periods
    with differing outcomes, indexed by the first period's covariate
    vector and weighted by a product Gaussian kernel of the per-
    coordinate covariate differences. h may be a positive scalar,
    a per-dimension sequence, or "silverman" (rule-of-thumb on the
    pooled differences).
    """
    if panel.z_t is None:
        raise InvalidParameterError("local fit needs per-period covariates z_t")
    threshold = pooled_threshold(panel, q)
    pairs = _local_pairs(panel, threshold)
    d = panel.d_z
    need = max(10, 3 * d)
    if len(pairs) < need:
        raise InsufficientTailError(
            f"{len(pairs)} contributing pairs; local fit needs at least {need}"
        )
    diffs = np.vstack([panel.z_t[i, t1] - panel.z_t[i, t2] for i, t1, t2 in pairs])
    if isinstance(h, str):
        if h != "silverman":
            raise InvalidParameterError(f"unknown bandwidth rule {h!r}")
        from .baselines import silverman_bandwidth

        h_vec = np.array([silverman_bandwidth(diffs[:, j]) for j in range(d)])
    else:
        h_vec = np.broadcast_to(np.asarray(h, dtype=float).ravel(), (d,)).copy()
        if np.any(h_vec <= 0.0):
            raise InvalidParameterError("bandwidths must be positive")
    scaled = diffs / h_vec
    weights = np.exp(-0.5 * np.sum(scaled * scaled, axis=1)) / (
        (2.0 * math.pi) ** (d / 2.0)
    )
    if np.all(weights < 1e-12):
        raise EffectiveSampleError("all kernel weights are numerically zero")

    units = []
    for (i, t1, t2), w in zip(pairs, weights):
        z_ref = panel.z_t[i, t1]
        G = -np.outer(np.log([panel.x[i, t1], panel.x[i, t2]]), z_ref)
        G = G - G.mean(axis=0)
        y_pair = np.array([panel.y[i, t1], panel.y[i, t2]])
        units.append(_CondUnit(G=G, y=y_pair, s=1, weight=float(w)))
    res = maximize_concave(lambda t: conditional_objective_parts(t, units), np.zeros(d))
    cov = np.linalg.inv(-res.hessian_at_opt)
    return PanelFit(
        theta_star=res.argmax,
        cov=cov,
        threshold=threshold,
        n_contributing=len(units),
        converged=res.converged,
    )
