"""Command-line interface.

Six subcommands: ``simulate`` (Monte Carlo tables + figures),
``fit-cs`` / ``fit-panel`` (CSV in, JSON artifact out), ``forecast``
(artifact + data to per-unit probabilities), ``evaluate`` (log
predictive scores, optionally pairwise tests), and ``loglog``
(survival-plot data + figure).

Exit codes: 0 success, 2 input or configuration error, 3 I/O error,
4 estimation error. Nothing else is returned; unexpected internal
failures are reported as estimation errors.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import os
import sys
import warnings

import click
import numpy as np

from .dataio import (
    SPEC_VERSION,
    atomic_write_text,
    read_cross_section,
    read_fit,
    read_forecast_csv,
    read_panel,
    serialize_fit,
    write_forecast_csv,
    write_json,
)
from .errors import ConfigError, EstimationError, InputError
from .evaluation import ForecastSet, log_predictive_score, lps_diff_test
from .experiments import (
    ExperimentConfig,
    lps_csv_text,
    run_experiment1,
    run_experiment2,
    summary_csv_text,
)
from .cs_model import fit_cs_tail
from .panel_model import (
    FeFit,
    fit_panel_conditional,
    fit_panel_dynamic,
    fit_panel_fe,
    fit_panel_local,
    forecast_unit,
)
from .tail_index import loglog_points


def _cli_errors(func):
    """Map library errors onto the fixed exit-code contract."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except InputError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except OSError as exc:
            click.echo(f"I/O error: {exc}", err=True)
            sys.exit(3)
        except EstimationError as exc:
            click.echo(f"estimation error: {exc}", err=True)
            sys.exit(4)
        except click.exceptions.Abort:
            raise
        except Exception as exc:  # contract allows no other exit codes
            click.echo(f"internal error: {exc}", err=True)
            sys.exit(4)

    return wrapper


def _fmt(v) -> str:
    return "%.6g" % v


@click.group()
@click.version_option(package_name="tailbin")
def main() -> None:
    """Binary-outcome models with heavy-tailed covariates."""


# ---------------------------------------------------------------------------
# simulate


@main.command("simulate")
@click.option("--experiment", required=True, type=click.Choice(["exp1", "exp2"]))
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Override the config base seed.")
@click.option("--reps", type=int, default=None, help="Override the repetition count.")
@_cli_errors
def simulate(experiment, config_path, out_dir, seed, reps) -> None:
    """Run a simulation study and write its tables, figures, and manifest."""
    with open(config_path, encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    stated = raw.get("experiment")
    if stated is not None and stated != experiment:
        raise ConfigError(
            f"config experiment {stated!r} does not match --experiment {experiment!r}"
        )
    raw = dict(raw, experiment=experiment)
    if seed is not None:
        raw["base_seed"] = seed
    if reps is not None:
        raw["reps"] = reps
    config = ExperimentConfig.from_dict(raw)

    os.makedirs(out_dir, exist_ok=True)
    from . import report  # deferred: pulls in matplotlib

    outputs = []
    if experiment == "exp1":
        result = run_experiment1(config)
        atomic_write_text(
            os.path.join(out_dir, "summary.csv"), summary_csv_text(result.summary_rows)
        )
        report.save_summary_figure(
            os.path.join(out_dir, "summary.png"), result.summary_rows
        )
        outputs += ["summary.csv", "summary.png"]
    else:
        result = run_experiment2(config)
        atomic_write_text(
            os.path.join(out_dir, "summary.csv"), summary_csv_text(result.summary_rows)
        )
        atomic_write_text(
            os.path.join(out_dir, "lps.csv"), lps_csv_text(result.lps_rows)
        )
        report.save_lps_figure(os.path.join(out_dir, "lps.png"), result.lps_rows)
        outputs += ["summary.csv", "lps.csv", "lps.png"]

    manifest = {
        "experiment": experiment,
        "config": dataclasses.asdict(config),
        "seed": config.base_seed,
        "outputs": sorted(outputs + ["manifest.json"]),
        "spec_version": SPEC_VERSION,
    }
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    click.echo(f"wrote {', '.join(sorted(outputs))} to {out_dir}")


# ---------------------------------------------------------------------------
# fitting


def _report_exclusions(excluded: int) -> None:
    if excluded:
        click.echo(f"excluded {excluded} row(s) with missing cells", err=True)


_CS_METHODS = {"mle": "mle", "hill": "hill", "rank-half": "rank_half"}


@main.command("fit-cs")
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--tail-q", required=True, type=float)
@click.option("--method", type=click.Choice(sorted(_CS_METHODS)), default="mle")
@click.option("--out", "out_path", required=True, type=click.Path())
@_cli_errors
def fit_cs(data_path, tail_q, method, out_path) -> None:
    """Fit the per-class tail model to a cross-section CSV."""
    data, excluded = read_cross_section(data_path)
    _report_exclusions(excluded)
    fit = fit_cs_tail(data, q=tail_q, method=_CS_METHODS[method])
    write_json(out_path, serialize_fit(fit))
    if data.d_z == 1:
        line = (
            f"alpha1={_fmt(fit.theta1[0])} (se={_fmt(np.sqrt(fit.cov1[0, 0]))}) "
            f"alpha0={_fmt(fit.theta0[0])} (se={_fmt(np.sqrt(fit.cov0[0, 0]))}) "
            f"tail_counts={fit.tail_counts[0]}/{fit.tail_counts[1]}"
        )
    else:
        se0 = np.sqrt(np.diag(fit.cov0))
        se1 = np.sqrt(np.diag(fit.cov1))
        line = (
            f"theta1={[_fmt(v) for v in fit.theta1]} (se={[_fmt(v) for v in se1]}) "
            f"theta0={[_fmt(v) for v in fit.theta0]} (se={[_fmt(v) for v in se0]})"
        )
    click.echo(line)


@main.command("fit-panel")
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option(
    "--mode", required=True, type=click.Choice(["conditional", "fe", "dynamic", "local"])
)
@click.option("--tail-q", required=True, type=float)
@click.option("--correction", type=click.Choice(["none", "jackknife"]), default=None)
@click.option("--bandwidth", default=None, help="local mode: number or 'silverman'.")
@click.option("--out", "out_path", required=True, type=click.Path())
@_cli_errors
def fit_panel(data_path, mode, tail_q, correction, bandwidth, out_path) -> None:
    """Fit a panel model (conditional, FE, dynamic, or local) to a panel CSV."""
    if correction is not None and mode != "fe":
        raise ConfigError("--correction applies only to --mode fe")
    if bandwidth is not None and mode != "local":
        raise ConfigError("--bandwidth applies only to --mode local")
    panel, excluded = read_panel(data_path)
    _report_exclusions(excluded)
    if mode == "conditional":
        fit = fit_panel_conditional(panel, tail_q)
    elif mode == "fe":
        fit = fit_panel_fe(panel, tail_q, correction=correction or "none")
    elif mode == "dynamic":
        fit = fit_panel_dynamic(panel, tail_q)
    else:
        h = "silverman"
        if bandwidth is not None and bandwidth != "silverman":
            try:
                h = float(bandwidth)
            except ValueError as exc:
                raise ConfigError(
                    f"--bandwidth must be a number or 'silverman', got {bandwidth!r}"
                ) from exc
        fit = fit_panel_local(panel, tail_q, h=h)
    doc = serialize_fit(fit)
    if mode == "local":
        doc["variant"] = "local"
    write_json(out_path, doc)

    if mode == "dynamic":
        parts = [
            f"{name}={[_fmt(v) for v in vec]}"
            for name, vec in (
                ("theta_01", fit.theta_01),
                ("theta_10", fit.theta_10),
                ("theta_11", fit.theta_11),
            )
        ]
        click.echo(" ".join(parts) + f" windows={fit.n_windows}")
    else:
        se = np.sqrt(np.maximum(np.diag(np.atleast_2d(fit.cov)), 0.0))
        click.echo(
            f"theta_star={[_fmt(v) for v in np.ravel(fit.theta_star)]} "
            f"(se={[_fmt(v) for v in se]})"
        )


# ---------------------------------------------------------------------------
# forecasting and scoring


@main.command("forecast")
@click.option("--fit", "fit_path", required=True, type=click.Path())
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@_cli_errors
def forecast(fit_path, data_path, out_path) -> None:
    """Forecast P(y=1) per retained unit at its latest covariate value."""
    fit, _ = read_fit(fit_path)
    if not isinstance(fit, FeFit):
        raise ConfigError(
            "forecast requires a panel_fe artifact; unit effects are not "
            "identified in other models"
        )
    panel, excluded = read_panel(data_path)
    _report_exclusions(excluded)
    rows = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for i, unit in enumerate(panel.ids):
            unit_key = unit if not isinstance(unit, np.integer) else int(unit)
            if unit_key not in fit.a_tilde:
                click.echo(f"unit {unit_key} not retained in the fit; skipped", err=True)
                continue
            observed = np.where(np.isfinite(panel.x[i]))[0]
            if observed.size == 0:
                click.echo(f"unit {unit_key} has no observed x; skipped", err=True)
                continue
            j = int(observed[-1])
            if panel.z is not None:
                z = panel.z[i]
            elif panel.z_t is not None:
                z = panel.z_t[i, j]
            else:
                z = np.ones(1)
            p_hat = forecast_unit(fit, unit_key, float(panel.x[i, j]), z)
            y_val = panel.y[i, j]
            rows.append((unit_key, p_hat, int(y_val) if np.isfinite(y_val) else None))
    for message in sorted({str(w.message) for w in caught}):
        click.echo(f"warning: {message}", err=True)
    if not rows:
        raise EstimationError("no retained units present in the data")
    include_y = any(r[2] is not None for r in rows)
    write_forecast_csv(out_path, rows, include_y)
    click.echo(f"wrote {len(rows)} forecast(s) to {out_path}")


@main.command("evaluate")
@click.option(
    "--forecasts", "paths", required=True, multiple=True, type=click.Path()
)
@click.option("--pairwise", is_flag=True, default=False)
@_cli_errors
def evaluate(paths, pairwise) -> None:
    """Score forecast files; optionally test each against the first."""
    sets = []
    for path in paths:
        units, p_hat, y = read_forecast_csv(path)
        key = {u: i for i, u in enumerate(units)}
        if len(key) != len(units):
            raise ConfigError(f"{path}: duplicate unit ids")
        sets.append((path, ForecastSet(units=np.arange(len(units)), p_hat=p_hat, y=y), units))
    header = "file,n,sum_lps,mean_lps"
    if pairwise:
        header += ",t_vs_first,p_vs_first"
    click.echo(header)
    first = sets[0]
    for k, (path, fs, units) in enumerate(sets):
        res = log_predictive_score(fs)
        cells = [path, str(fs.n), "%.10g" % res.sum_lps, "%.10g" % res.mean_lps]
        if pairwise:
            if k == 0:
                cells += ["", ""]
            else:
                # align on shared unit labels before the paired test
                shared = [u for u in first[2] if u in set(units)]
                pos_a = {u: i for i, u in enumerate(units)}
                pos_b = {u: i for i, u in enumerate(first[2])}
                ia = [pos_a[u] for u in shared]
                ib = [pos_b[u] for u in shared]
                fa = ForecastSet(
                    units=np.arange(len(shared)),
                    p_hat=fs.p_hat[ia], y=fs.y[ia],
                )
                fb = ForecastSet(
                    units=np.arange(len(shared)),
                    p_hat=first[1].p_hat[ib], y=first[1].y[ib],
                )
                test = lps_diff_test(fa, fb)
                if test.degenerate:
                    cells += ["", ""]
                else:
                    cells += ["%.10g" % test.t, "%.10g" % test.p]
        click.echo(",".join(cells))


# ---------------------------------------------------------------------------
# diagnostics


@main.command("loglog")
@click.option("--data", "data_path", required=True, type=click.Path())
@click.option("--by-y", "by_y", is_flag=True, default=False)
@click.option("--out", "out_path", required=True, type=click.Path())
@_cli_errors
def loglog(data_path, by_y, out_path) -> None:
    """Write survival-plot data (and figure) for the covariate tail."""
    data, excluded = read_cross_section(data_path)
    _report_exclusions(excluded)
    if by_y:
        groups = {
            "0": loglog_points(data.x[data.y == 0]),
            "1": loglog_points(data.x[data.y == 1]),
        }
    else:
        groups = {"all": loglog_points(data.x)}
    lines = ["group,log_x,log_survival"]
    for name in sorted(groups):
        for log_x, log_s in groups[name]:
            lines.append(f"{name},{'%.10g' % log_x},{'%.10g' % log_s}")
    atomic_write_text(out_path, "\n".join(lines) + "\n")

    from . import report  # deferred: pulls in matplotlib

    png_path = os.path.splitext(out_path)[0] + ".png"
    report.save_loglog_figure(png_path, groups)
    click.echo(f"wrote {out_path} and {png_path}")


if __name__ == "__main__":
    main()
