"""Figure rendering for the CLI: plots saved next to the CSV outputs.

All figures go through one savefig wrapper that pins the backend, size,
dpi, and PNG metadata, so repeated runs of the same command produce
byte-identical image files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_DPI = 120
_METADATA = {"Software": "tailbin"}

_ESTIMATOR_STYLE = {
    "tail": dict(color="#1f77b4", marker="o"),
    "logit_all": dict(color="#d62728", marker="s"),
    "logit_tail": dict(color="#ff7f0e", marker="^"),
    "local_linear": dict(color="#2ca02c", marker="v"),
    "local_logit": dict(color="#9467bd", marker="d"),
}


def _save(fig, path: str) -> None:
    fig.savefig(path, dpi=_DPI, metadata=_METADATA)
    plt.close(fig)


def save_loglog_figure(path: str, groups: dict) -> None:
    """Scatter of the survival-plot points, one series per group."""
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for name in sorted(groups):
        pts = groups[name]
        ax.plot(pts[:, 0], pts[:, 1], ".", markersize=3, label=f"y = {name}"
                if name != "all" else "all observations")
    ax.set_xlabel("log x")
    ax.set_ylabel("log survival")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def save_summary_figure(path: str, summary_rows) -> None:
    """Probability RMSE by evaluation quantile, one line per estimator."""
    series: dict = {}
    for row in summary_rows:
        if row.estimand != "prob" or row.rmse is None:
            continue
        series.setdefault(row.estimator, []).append((row.eval_point, row.rmse))
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    for name, pts in series.items():
        pts.sort()
        qs = [p[0] for p in pts]
        vals = [p[1] for p in pts]
        ax.plot(qs, vals, label=name, **_ESTIMATOR_STYLE.get(name, {}))
    ax.set_xlabel("evaluation quantile of x")
    ax.set_ylabel("probability RMSE")
    ax.set_yscale("log")
    if series:
        ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def save_lps_figure(path: str, lps_rows) -> None:
    """Mean log predictive score per estimator (higher is better)."""
    names = [r.estimator for r in lps_rows if r.mean_lps is not None]
    values = [r.mean_lps for r in lps_rows if r.mean_lps is not None]
    fig, ax = plt.subplots(figsize=(6.0, 4.5))
    colors = [_ESTIMATOR_STYLE.get(n, {}).get("color", "#7f7f7f") for n in names]
    ax.bar(names, values, color=colors)
    ax.set_ylabel("mean log predictive score")
    ax.axhline(0.0, color="black", linewidth=0.8)
    fig.tight_layout()
    _save(fig, path)
