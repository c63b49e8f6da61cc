"""Simulation studies: data generators and replication drivers.

Two designs built on the threshold-crossing rule y = 1{x - eps >= c}
with c the difference of medians, so that P(y=1) = 1/2 at the median of
x. The first is cross-sectional with common tail index; the second is a
panel whose units draw individual tail thickness from a two-component
normal mixture. Drivers run independent repetitions on counter-derived
streams, survive per-repetition estimator failures by recording NA
cells, and aggregate into fixed-layout CSV tables.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .baselines import (
    fit_logit_cs,
    fit_logit_panel,
    local_linear,
    local_logit,
    silverman_bandwidth,
)
from .cs_model import (
    CrossSection,
    elasticity_numeric,
    fit_cs_tail,
    partial_effect,
    predict_prob_cs,
)
from .errors import ConfigError, EstimationError
from .evaluation import (
    ForecastSet,
    bias_sd_rmse,
    log_predictive_score,
    lps_diff_test,
)
from .numerics import (
    RngStream,
    cdf_abs_t,
    make_rng_stream,
    pdf_abs_t,
    quantile_abs_t,
    sample_abs_t,
)
from .panel_model import PanelData, fit_panel_fe, forecast_unit

SUMMARY_HEADER = "experiment,alpha_x,alpha_eps,estimator,estimand,eval_point,bias,sd,rmse,n_ok"
LPS_HEADER = "alpha_x,alpha_eps,estimator,sum_lps,mean_lps,n_f,t_vs_tail,p_vs_tail"

_ESTIMATORS_EXP1 = ("tail", "logit_all", "logit_tail", "local_linear", "local_logit")
_ESTIMATORS_EXP2 = ("tail", "logit_all", "logit_tail")
_ESTIMANDS = ("alpha1", "alpha0", "elasticity", "prob", "pe")
_ELASTICITY_Q = 0.975

_MIX_WEIGHT_LOW = 0.2
_MIX_MEANS = (-0.25, 0.25)
_MIX_SD = 0.1
_DF_FLOOR = 0.05


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated settings for one simulation study."""

    experiment: str
    alpha_x: float
    alpha_eps: float
    n: int
    reps: int
    base_seed: int = 0
    t: int | None = None
    tail_q: float | None = None
    eval_quantiles: tuple = (0.90, 0.95, 0.975, 0.99)
    estimators: tuple | None = None
    cs_method: str = "rank_half"

    def __post_init__(self) -> None:
        if self.experiment not in ("exp1", "exp2"):
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        for name in ("alpha_x", "alpha_eps"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and np.isfinite(v) and v > 0):
                raise ConfigError(f"{name} must be a positive real")
        if not (isinstance(self.n, int) and self.n >= 2):
            raise ConfigError("n must be an integer >= 2")
        if not (isinstance(self.reps, int) and self.reps >= 1):
            raise ConfigError("reps must be an integer >= 1")
        if not (isinstance(self.base_seed, int) and self.base_seed >= 0):
            raise ConfigError("base_seed must be a non-negative integer")
        if self.tail_q is None:
            object.__setattr__(
                self, "tail_q", 0.975 if self.experiment == "exp1" else 0.90
            )
        if not (0.0 < self.tail_q < 1.0):
            raise ConfigError("tail_q must lie strictly between 0 and 1")
        qs = tuple(float(q) for q in self.eval_quantiles)
        if not qs or any(not (0.0 < q < 1.0) for q in qs):
            raise ConfigError("eval_quantiles must lie strictly between 0 and 1")
        object.__setattr__(self, "eval_quantiles", tuple(sorted(set(qs))))
        if self.experiment == "exp2":
            if not (isinstance(self.t, int) and self.t >= 2):
                raise ConfigError("exp2 needs an integer period count t >= 2")
            allowed = _ESTIMATORS_EXP2
        else:
            allowed = _ESTIMATORS_EXP1
        est = tuple(self.estimators) if self.estimators is not None else allowed
        bad = [e for e in est if e not in allowed]
        if bad:
            raise ConfigError(
                f"estimator(s) {bad} not available for {self.experiment}"
            )
        if not est:
            raise ConfigError("estimators must not be empty")
        if self.experiment == "exp2" and "tail" not in est:
            raise ConfigError("exp2 requires the tail estimator for comparisons")
        # canonical ordering for deterministic table layout
        object.__setattr__(
            self, "estimators", tuple(e for e in allowed if e in est)
        )
        if self.cs_method not in ("rank_half", "mle"):
            raise ConfigError(f"unknown cs_method {self.cs_method!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        allowed = {
            "experiment", "alpha_x", "alpha_eps", "n", "reps", "base_seed",
            "t", "tail_q", "eval_quantiles", "estimators", "cs_method",
        }
        unknown = sorted(set(raw) - allowed)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        required = ["experiment", "alpha_x", "alpha_eps", "n", "reps"]
        if raw.get("experiment") == "exp2":
            required.append("t")
        for name in required:
            if name not in raw:
                raise ConfigError(f"missing required config field '{name}'")
        kwargs = dict(raw)
        for key in ("eval_quantiles", "estimators"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class DgpTruth:
    """Closed-form ground truth of the threshold-crossing design."""

    alpha_x: float
    alpha_eps: float
    crossing_level: float

    @property
    def alpha1(self) -> float:
        return self.alpha_x

    @property
    def alpha0(self) -> float:
        return self.alpha_x + self.alpha_eps

    @property
    def elasticity_limit(self) -> float:
        return -self.alpha_eps

    @property
    def theta_star(self) -> float:
        return -self.alpha_eps

    def pi(self, x: float) -> float:
        """True P(y=1 | x): the noise CDF at x minus the crossing level."""
        u = float(x) - self.crossing_level
        return float(cdf_abs_t(self.alpha_eps, u)) if u > 0.0 else 0.0

    def pi_derivative(self, x: float) -> float:
        u = float(x) - self.crossing_level
        return float(pdf_abs_t(self.alpha_eps, u)) if u > 0.0 else 0.0


def _crossing_level(alpha_x: float, alpha_eps: float) -> float:
    return quantile_abs_t(alpha_x, 0.5) - quantile_abs_t(alpha_eps, 0.5)


def dgp_exp1(stream: RngStream, config: ExperimentConfig):
    """Cross-section draw: x ~ |t_ax|, eps ~ |t_ae|, median-crossing y."""
    truth = DgpTruth(
        alpha_x=config.alpha_x,
        alpha_eps=config.alpha_eps,
        crossing_level=_crossing_level(config.alpha_x, config.alpha_eps),
    )
    x = sample_abs_t(stream, config.alpha_x, size=config.n)
    eps = sample_abs_t(stream, config.alpha_eps, size=config.n)
    y = (x - eps >= truth.crossing_level).astype(int)
    return CrossSection(y=y, x=x), truth


def mixture_tail_thickness(stream: RngStream, alpha_x: float, n: int) -> np.ndarray:
    """Per-unit df: alpha_x plus a two-part normal mixture shift, floored."""
    low = stream.uniforms(n) < _MIX_WEIGHT_LOW
    means = np.where(low, _MIX_MEANS[0], _MIX_MEANS[1])
    lam_tilde = means + _MIX_SD * stream.normals(n)
    return np.maximum(np.maximum(alpha_x + lam_tilde, 0.0), _DF_FLOOR)


def dgp_exp2(stream: RngStream, config: ExperimentConfig):
    """Panel draw over t+1 periods with unit-specific tail thickness.

    The last period is reserved for forecasting; the crossing level uses
    the common alpha_x median, not the unit-level df.
    """
    n, t_plus = config.n, config.t + 1
    truth = DgpTruth(
        alpha_x=config.alpha_x,
        alpha_eps=config.alpha_eps,
        crossing_level=_crossing_level(config.alpha_x, config.alpha_eps),
    )
    lam = mixture_tail_thickness(stream, config.alpha_x, n)
    x = sample_abs_t(stream, np.repeat(lam, t_plus)).reshape(n, t_plus)
    eps = sample_abs_t(stream, config.alpha_eps, size=n * t_plus).reshape(n, t_plus)
    y = (x - eps >= truth.crossing_level).astype(float)
    z = np.ones((n, 1))
    return PanelData(ids=np.arange(n), y=y, x=x, z=z), truth


# ---------------------------------------------------------------------------
# Experiment 1: cross-sectional estimation accuracy


@dataclass
class SummaryRow:
    experiment: str
    alpha_x: float
    alpha_eps: float
    estimator: str
    estimand: str
    eval_point: float | None
    bias: float | None
    sd: float | None
    rmse: float | None
    n_ok: int


@dataclass
class Experiment1Result:
    config: ExperimentConfig
    truth: DgpTruth
    summary_rows: list
    rep_cells: list  # one dict per repetition: (estimator, estimand, q) -> value


def _point_cells(cells, name, curve, eval_points, x_elast):
    """Probability, derivative, and point-elasticity cells off one curve."""
    for q, x_q in eval_points:
        try:
            cells[(name, "prob", q)] = float(curve(x_q))
        except EstimationError:
            pass
        try:
            cells[(name, "pe", q)] = partial_effect(curve, x_q)
        except EstimationError:
            pass
    try:
        cells[(name, "elasticity", _ELASTICITY_Q)] = elasticity_numeric(curve, x_elast)
    except EstimationError:
        pass


def _run_rep_exp1(config: ExperimentConfig, rep: int, eval_points, x_elast) -> dict:
    stream = make_rng_stream(config.base_seed, rep)
    data, _ = dgp_exp1(stream, config)
    cells: dict = {}
    z1 = np.ones(1)
    if "tail" in config.estimators:
        try:
            fit = fit_cs_tail(data, config.tail_q, method=config.cs_method)
        except EstimationError:
            fit = None
        if fit is not None:
            cells[("tail", "alpha1", None)] = fit.alpha(1, z1)
            cells[("tail", "alpha0", None)] = fit.alpha(0, z1)
            _point_cells(
                cells, "tail",
                lambda v: predict_prob_cs(fit, v, z1),
                eval_points, x_elast,
            )
    for name, subset in (("logit_all", "all"), ("logit_tail", "tail")):
        if name not in config.estimators:
            continue
        try:
            lfit = fit_logit_cs(data, subset=subset, q=config.tail_q)
        except EstimationError:
            continue
        _point_cells(cells, name, lfit.predict, eval_points, x_elast)
    if {"local_linear", "local_logit"} & set(config.estimators):
        try:
            h = silverman_bandwidth(data.x)
        except EstimationError:
            h = None
        if h is not None:
            y_f = data.y.astype(float)
            if "local_linear" in config.estimators:
                _point_cells(
                    cells, "local_linear",
                    lambda v: local_linear(y_f, data.x, v, h),
                    eval_points, x_elast,
                )
            if "local_logit" in config.estimators:
                _point_cells(
                    cells, "local_logit",
                    lambda v: local_logit(y_f, data.x, v, h).p,
                    eval_points, x_elast,
                )
    return cells


def _thread_count(reps: int) -> int:
    raw = os.environ.get("TAILBIN_THREADS")
    if raw is None:
        workers = os.cpu_count() or 1
    else:
        try:
            workers = int(raw)
        except ValueError as exc:
            raise ConfigError("TAILBIN_THREADS must be an integer") from exc
        if workers < 1:
            raise ConfigError("TAILBIN_THREADS must be >= 1")
    return max(1, min(workers, reps))


def _map_reps(fn, reps: int):
    """Run fn(0..reps-1), collected in index order regardless of schedule."""
    workers = _thread_count(reps)
    if workers == 1:
        return [fn(r) for r in range(reps)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(reps)))


def _aggregate(config, truth, rep_cells, keys, truth_by_key) -> list:
    rows = []
    for key in keys:
        estimator, estimand, q = key
        values = [c[key] for c in rep_cells if key in c]
        if values:
            stats = bias_sd_rmse(values, truth_by_key(key))
            bias, sd, rmse = stats.bias, stats.sd, stats.rmse
        else:
            bias = sd = rmse = None
        rows.append(SummaryRow(
            experiment=config.experiment,
            alpha_x=config.alpha_x, alpha_eps=config.alpha_eps,
            estimator=estimator, estimand=estimand, eval_point=q,
            bias=bias, sd=sd, rmse=rmse, n_ok=len(values),
        ))
    return rows


def run_experiment1(config: ExperimentConfig) -> Experiment1Result:
    """Replicate the cross-sectional design and tabulate accuracy.

    Each repetition r draws from the stream (base_seed, r), so results
    for one repetition never depend on how many others run.
    """
    if config.experiment != "exp1":
        raise ConfigError("config is not for exp1")
    eval_points = [
        (q, quantile_abs_t(config.alpha_x, q)) for q in config.eval_quantiles
    ]
    x_elast = quantile_abs_t(config.alpha_x, _ELASTICITY_Q)
    truth = DgpTruth(
        alpha_x=config.alpha_x, alpha_eps=config.alpha_eps,
        crossing_level=_crossing_level(config.alpha_x, config.alpha_eps),
    )
    rep_cells = _map_reps(
        lambda r: _run_rep_exp1(config, r, eval_points, x_elast), config.reps
    )

    x_by_q = dict(eval_points)
    keys = []
    for name in config.estimators:
        if name == "tail":
            keys.append(("tail", "alpha1", None))
            keys.append(("tail", "alpha0", None))
        keys.append((name, "elasticity", _ELASTICITY_Q))
        for q in config.eval_quantiles:
            keys.append((name, "prob", q))
        for q in config.eval_quantiles:
            keys.append((name, "pe", q))

    def truth_by_key(key):
        _, estimand, q = key
        if estimand == "alpha1":
            return truth.alpha1
        if estimand == "alpha0":
            return truth.alpha0
        if estimand == "elasticity":
            return truth.elasticity_limit
        x_q = x_by_q.get(q, quantile_abs_t(config.alpha_x, q))
        return truth.pi(x_q) if estimand == "prob" else truth.pi_derivative(x_q)

    rows = _aggregate(config, truth, rep_cells, keys, truth_by_key)
    return Experiment1Result(config=config, truth=truth,
                             summary_rows=rows, rep_cells=rep_cells)


# ---------------------------------------------------------------------------
# Experiment 2: panel forecasting


@dataclass
class LpsRow:
    alpha_x: float
    alpha_eps: float
    estimator: str
    sum_lps: float | None
    mean_lps: float | None
    n_f: float | None
    t_vs_tail: float | None
    p_vs_tail: float | None


@dataclass
class Experiment2Result:
    config: ExperimentConfig
    truth: DgpTruth
    summary_rows: list
    lps_rows: list
    rep_theta: list  # fitted slope per repetition (None on failure)
    rep_lps: list    # per repetition: estimator -> LpsResult (absent on failure)


def _forecast_eligible(est_panel: PanelData, threshold: float,
                       x_next: np.ndarray, y_next: np.ndarray) -> np.ndarray:
    """Row indices passing the three forecast-set criteria.

    Tail history in the estimation sample, outcome switching among those
    tail observations, and a tail covariate in the forecast period; tail
    comparisons are closed (ties included).
    """
    tails = est_panel.observed & (est_panel.x >= threshold)
    masked_y = np.where(tails, est_panel.y, np.nan)
    with np.errstate(invalid="ignore"):
        vmin = np.nanmin(np.where(tails, masked_y, np.inf), axis=1)
        vmax = np.nanmax(np.where(tails, masked_y, -np.inf), axis=1)
    has_tail = tails.any(axis=1)
    switches = has_tail & (vmax > vmin)
    next_ok = np.isfinite(x_next) & np.isfinite(y_next) & (x_next >= threshold)
    return np.where(switches & next_ok)[0]


def _run_rep_exp2(config: ExperimentConfig, rep: int) -> dict:
    stream = make_rng_stream(config.base_seed, rep)
    panel_full, _ = dgp_exp2(stream, config)
    t = config.t
    est_panel = PanelData(
        ids=panel_full.ids, y=panel_full.y[:, :t], x=panel_full.x[:, :t],
        z=panel_full.z,
    )
    x_next = panel_full.x[:, t]
    y_next = panel_full.y[:, t]
    out = {"theta": None, "lps": {}, "records": {}}
    try:
        fit_tail = fit_panel_fe(
            est_panel, config.tail_q, transform="log_tail", correction="jackknife"
        )
    except EstimationError:
        return out
    out["theta"] = float(fit_tail.theta_star[0])

    fits = {"tail": fit_tail}
    for name, subset in (("logit_all", "all"), ("logit_tail", "tail")):
        if name not in config.estimators:
            continue
        try:
            # Baselines get the same split-panel correction as the tail fit.
            fits[name] = fit_logit_panel(
                est_panel, config.tail_q, subset=subset, correction="jackknife"
            )
        except EstimationError:
            pass

    idx = _forecast_eligible(est_panel, fit_tail.threshold, x_next, y_next)
    units = [
        int(est_panel.ids[i]) for i in idx
        if all(est_panel.ids[i] in f.a_tilde for f in fits.values())
    ]
    if not units:
        return out
    kept = np.array(units)
    y_real = y_next[kept].astype(int)
    for name, fit in fits.items():
        p_hat = np.array([
            forecast_unit(fit, int(u), float(x_next[u]), np.ones(1)) for u in kept
        ])
        fs = ForecastSet(units=kept, p_hat=p_hat, y=y_real)
        out["lps"][name] = log_predictive_score(fs)
        out["records"][name] = fs
    return out


def run_experiment2(config: ExperimentConfig) -> Experiment2Result:
    """Replicate the panel design and score one-period-ahead forecasts."""
    if config.experiment != "exp2":
        raise ConfigError("config is not for exp2")
    truth = DgpTruth(
        alpha_x=config.alpha_x, alpha_eps=config.alpha_eps,
        crossing_level=_crossing_level(config.alpha_x, config.alpha_eps),
    )
    reps_out = _map_reps(lambda r: _run_rep_exp2(config, r), config.reps)

    rep_theta = [r["theta"] for r in reps_out]
    rep_lps = [r["lps"] for r in reps_out]
    rep_cells = [
        {("tail", "theta_star", None): r["theta"]} if r["theta"] is not None else {}
        for r in reps_out
    ]
    summary_rows = _aggregate(
        config, truth, rep_cells, [("tail", "theta_star", None)],
        lambda key: truth.theta_star,
    )

    lps_rows = []
    for name in config.estimators:
        sums = [r[name].sum_lps for r in rep_lps if name in r]
        means = [r[name].mean_lps for r in rep_lps if name in r]
        ns = [r[name].n for r in rep_lps if name in r]
        t_stat = p_val = None
        if name != "tail" and sums:
            pooled_self, pooled_tail = _pooled_sets(config, reps_out, name)
            if pooled_self is not None:
                try:
                    test = lps_diff_test(pooled_self, pooled_tail)
                    if not test.degenerate:
                        t_stat, p_val = test.t, test.p
                except EstimationError:
                    pass
        lps_rows.append(LpsRow(
            alpha_x=config.alpha_x, alpha_eps=config.alpha_eps, estimator=name,
            sum_lps=float(np.mean(sums)) if sums else None,
            mean_lps=float(np.mean(means)) if means else None,
            n_f=float(np.mean(ns)) if ns else None,
            t_vs_tail=t_stat, p_vs_tail=p_val,
        ))
    return Experiment2Result(
        config=config, truth=truth, summary_rows=summary_rows,
        lps_rows=lps_rows, rep_theta=rep_theta, rep_lps=rep_lps,
    )


def _pooled_sets(config, reps_out, name):
    """Stack per-rep forecast records for a pooled paired test vs tail."""
    units, p_self, p_tail, ys = [], [], [], []
    for r, rec in enumerate(reps_out):
        if name not in rec["records"]:
            continue
        fs_self = rec["records"][name]
        fs_tail = rec["records"]["tail"]
        units.append(r * config.n + fs_self.units)
        p_self.append(fs_self.p_hat)
        p_tail.append(fs_tail.p_hat)
        ys.append(fs_self.y)
    if not units:
        return None, None
    units = np.concatenate(units)
    ys = np.concatenate(ys)
    return (
        ForecastSet(units=units, p_hat=np.concatenate(p_self), y=ys),
        ForecastSet(units=units, p_hat=np.concatenate(p_tail), y=ys),
    )


# ---------------------------------------------------------------------------
# CSV rendering


def _fmt(v) -> str:
    if v is None:
        return ""
    return "%.10g" % v


def summary_csv_text(rows) -> str:
    lines = [SUMMARY_HEADER]
    for r in rows:
        lines.append(",".join([
            r.experiment, _fmt(r.alpha_x), _fmt(r.alpha_eps), r.estimator,
            r.estimand, _fmt(r.eval_point), _fmt(r.bias), _fmt(r.sd),
            _fmt(r.rmse), str(r.n_ok),
        ]))
    return "\n".join(lines) + "\n"


def lps_csv_text(rows) -> str:
    lines = [LPS_HEADER]
    for r in rows:
        lines.append(",".join([
            _fmt(r.alpha_x), _fmt(r.alpha_eps), r.estimator, _fmt(r.sum_lps),
            _fmt(r.mean_lps), _fmt(r.n_f), _fmt(r.t_vs_tail), _fmt(r.p_vs_tail),
        ]))
    return "\n".join(lines) + "\n"
