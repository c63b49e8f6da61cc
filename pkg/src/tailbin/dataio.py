"""CSV schemas, atomic file writes, and fit-artifact (de)serialization.

Cross-section files carry the exact lowercase header ``y,x,z1,...,zK``;
panel files carry ``unit,t,y,x,z1,...,zK``. Empty cells mark missing
values: rows (or panel cells) missing y or x are excluded and counted,
while present-but-invalid values are schema errors that name the
offending file line.

Artifacts are JSON documents keyed by ``model`` with ``params`` (named
coefficient arrays), ``cov``, threshold fields, ``tail_counts``,
``a_tilde`` (unit-effect map, FE fits only), ``converged``, ``seed``,
and ``spec_version``. A few model-specific keys (``method``,
``transform``, ``correction``, counts) are included because the parse
side must rebuild the exact fit object.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile

import numpy as np

from .baselines import LogitFit
from .cs_model import CrossSection, CsFit, TailProbModel
from .errors import ConfigError, SchemaError
from .panel_model import DynFit, FeFit, PanelData, PanelFit

SPEC_VERSION = "1"

_MODEL_NAMES = ("cs_tail", "panel_conditional", "panel_fe", "panel_dynamic", "logit")


# ---------------------------------------------------------------------------
# atomic writes


def atomic_write_text(path: str, text: str) -> None:
    """Write text via a sibling temp file and rename, never in place."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: str, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# CSV schemas


def _check_header(header, fixed, path):
    """Header must be the fixed names then z1..zK, consecutively numbered."""
    got = [h.strip() for h in header]
    k = len(got) - len(fixed)
    want = list(fixed) + [f"z{i}" for i in range(1, k + 1)]
    if k < 0 or got != want:
        raise SchemaError(
            f"{path}: expected header '{','.join(fixed)}[,z1,...]', got "
            f"'{','.join(got)}'"
        )
    return k


def _cell_float(raw: str, line: int, name: str, path: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise SchemaError(f"{path}: row {line}: {name} is not a number: {raw!r}") from exc


def _parse_y(raw: str, line: int, path: str) -> int:
    value = _cell_float(raw, line, "y", path)
    if value not in (0.0, 1.0):
        raise SchemaError(f"{path}: row {line}: y must be 0 or 1, got {raw!r}")
    return int(value)


def _parse_x(raw: str, line: int, path: str) -> float:
    value = _cell_float(raw, line, "x", path)
    if value <= 0.0:
        raise SchemaError(f"{path}: row {line}: x must be > 0, got {raw!r}")
    return value


def _read_rows(path: str, fixed):
    try:
        with open(path, encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle)
            try:
                header = next(reader)
            except StopIteration:
                raise SchemaError(f"{path}: file is empty") from None
            k = _check_header(header, fixed, path)
            rows = []
            for line, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != len(fixed) + k:
                    raise SchemaError(
                        f"{path}: row {line}: expected {len(fixed) + k} cells, "
                        f"got {len(row)}"
                    )
                rows.append((line, [c.strip() for c in row]))
    except OSError:
        raise
    return k, rows


def read_cross_section(path: str):
    """Parse a ``y,x,z1..`` file into a CrossSection.

    Returns (data, n_excluded) where excluded rows are those with an
    empty y, x, or z cell.
    """
    k, rows = _read_rows(path, ("y", "x"))
    ys, xs, zs = [], [], []
    excluded = 0
    for line, row in rows:
        if any(cell == "" for cell in row):
            excluded += 1
            continue
        ys.append(_parse_y(row[0], line, path))
        xs.append(_parse_x(row[1], line, path))
        zs.append([_cell_float(c, line, f"z{j+1}", path) for j, c in enumerate(row[2:])])
    if not ys:
        raise SchemaError(f"{path}: no complete data rows")
    z = np.asarray(zs) if k else None
    return CrossSection(y=np.asarray(ys), x=np.asarray(xs), z=z), excluded


def _parse_unit(raw: str, line: int, path: str):
    if raw == "":
        raise SchemaError(f"{path}: row {line}: unit must not be empty")
    try:
        return int(raw)
    except ValueError:
        return raw


def read_panel(path: str):
    """Parse a ``unit,t,y,x,z1..`` file into a PanelData.

    Periods span the full integer range seen in the file, so gaps stay
    as unobserved columns and period adjacency is preserved. A cell
    missing either y or x counts as excluded and is left unobserved.
    Covariates constant within every unit become the per-unit z;
    otherwise they become the per-period z_t. Without z columns every
    unit gets the constant covariate 1.
    """
    k, rows = _read_rows(path, ("unit", "t", "y", "x"))
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    parsed = []
    excluded = 0
    for line, row in rows:
        unit = _parse_unit(row[0], line, path)
        if row[1] == "":
            raise SchemaError(f"{path}: row {line}: t must not be empty")
        t_val = _cell_float(row[1], line, "t", path)
        if t_val != int(t_val):
            raise SchemaError(f"{path}: row {line}: t must be an integer, got {row[1]!r}")
        zc = row[4:]
        if any(c == "" for c in zc):
            excluded += 1
            continue
        z_vals = [_cell_float(c, line, f"z{j+1}", path) for j, c in enumerate(zc)]
        if row[2] == "" or row[3] == "":
            excluded += 1
            y_val = x_val = float("nan")
        else:
            y_val = float(_parse_y(row[2], line, path))
            x_val = _parse_x(row[3], line, path)
        parsed.append((unit, int(t_val), y_val, x_val, z_vals, line))

    units = sorted({p[0] for p in parsed}, key=lambda u: (isinstance(u, str), u))
    t_min = min(p[1] for p in parsed)
    t_max = max(p[1] for p in parsed)
    n, width = len(units), t_max - t_min + 1
    index = {u: i for i, u in enumerate(units)}
    y = np.full((n, width), np.nan)
    x = np.full((n, width), np.nan)
    z_t = np.full((n, width, k), np.nan) if k else None
    seen = set()
    for unit, t_val, y_val, x_val, z_vals, line in parsed:
        key = (unit, t_val)
        if key in seen:
            raise SchemaError(f"{path}: row {line}: duplicate cell unit={unit} t={t_val}")
        seen.add(key)
        i, j = index[unit], t_val - t_min
        y[i, j] = y_val
        x[i, j] = x_val
        if k:
            z_t[i, j] = z_vals

    ids = np.asarray(units, dtype=object if any(isinstance(u, str) for u in units) else int)
    if z_t is None:
        return PanelData(ids=ids, y=y, x=x, z=np.ones((n, 1))), excluded
    # constant-within-unit covariates collapse to one row per unit
    z_const = np.full((n, k), np.nan)
    constant = True
    for i in range(n):
        rows_i = z_t[i][np.isfinite(z_t[i][:, 0])]
        if rows_i.shape[0] == 0:
            raise SchemaError(f"{path}: unit {units[i]} has no row with complete z")
        if not np.array_equal(rows_i, np.broadcast_to(rows_i[0], rows_i.shape)):
            constant = False
            break
        z_const[i] = rows_i[0]
    if constant:
        return PanelData(ids=ids, y=y, x=x, z=z_const), excluded
    return PanelData(ids=ids, y=y, x=x, z_t=z_t), excluded


# ---------------------------------------------------------------------------
# forecast files


def write_forecast_csv(path: str, rows, include_y: bool) -> None:
    """Rows are (unit, p_hat, y_or_None); column order is fixed."""
    lines = ["unit,p_hat" + (",y_realized" if include_y else "")]
    for unit, p_hat, y_val in rows:
        cells = [str(unit), "%.12g" % p_hat]
        if include_y:
            cells.append("" if y_val is None else str(int(y_val)))
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_forecast_csv(path: str):
    """Read ``unit,p_hat,y_realized`` rows; y is required for scoring."""
    try:
        with open(path, encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle)
            header = [h.strip() for h in next(reader, [])]
            if header != ["unit", "p_hat", "y_realized"]:
                raise SchemaError(
                    f"{path}: expected header 'unit,p_hat,y_realized', got "
                    f"'{','.join(header)}'"
                )
            units, p_hat, y = [], [], []
            for line, row in enumerate(reader, start=2):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) != 3:
                    raise SchemaError(f"{path}: row {line}: expected 3 cells")
                units.append(_parse_unit(row[0].strip(), line, path))
                p = _cell_float(row[1].strip(), line, "p_hat", path)
                if not (0.0 < p < 1.0):
                    raise SchemaError(
                        f"{path}: row {line}: p_hat must lie in (0, 1), got {row[1]!r}"
                    )
                p_hat.append(p)
                if row[2].strip() == "":
                    raise SchemaError(f"{path}: row {line}: y_realized is required")
                y.append(_parse_y(row[2].strip(), line, path))
    except OSError:
        raise
    if not units:
        raise SchemaError(f"{path}: no forecast rows")
    return units, np.asarray(p_hat), np.asarray(y)


# ---------------------------------------------------------------------------
# fit artifacts


def _mat(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def _vec(a) -> list:
    return np.asarray(a, dtype=float).ravel().tolist()


def _finite_or_none(v):
    return float(v) if v is not None and math.isfinite(v) else None


def serialize_fit(fit, seed=None) -> dict:
    """Build the JSON document for any supported fit object."""
    base = {"seed": seed, "spec_version": SPEC_VERSION}
    if isinstance(fit, CsFit):
        base.update(
            model="cs_tail",
            params={
                "theta0": _vec(fit.theta0),
                "theta1": _vec(fit.theta1),
                "tailprob_beta0": _vec(fit.tailprob_model.beta0),
                "tailprob_beta1": _vec(fit.tailprob_model.beta1),
            },
            cov=[_mat(fit.cov0), _mat(fit.cov1)],
            thresholds=[float(t) for t in fit.thresholds],
            tail_counts=[int(c) for c in fit.tail_counts],
            method=fit.method,
            n_obs=int(fit.n_obs),
            converged=bool(fit.converged),
        )
    elif isinstance(fit, FeFit):
        base.update(
            model="panel_fe",
            params={"theta_star": _vec(fit.theta_star)},
            cov=_mat(fit.cov),
            a_tilde={str(u): float(v) for u, v in fit.a_tilde.items()},
            transform=fit.transform,
            correction=fit.correction,
            dropped_units=[[str(u), reason] for u, reason in fit.dropped_units],
            converged=bool(fit.converged),
        )
        if fit.threshold is not None:
            base["threshold"] = float(fit.threshold)
        if fit.class_thresholds is not None:
            base["thresholds"] = [float(t) for t in fit.class_thresholds]
    elif isinstance(fit, PanelFit):
        base.update(
            model="panel_conditional",
            params={"theta_star": _vec(fit.theta_star)},
            cov=_mat(fit.cov),
            threshold=float(fit.threshold),
            n_contributing=int(fit.n_contributing),
            converged=bool(fit.converged),
        )
    elif isinstance(fit, DynFit):
        base.update(
            model="panel_dynamic",
            params={
                "theta_01": _vec(fit.theta_01),
                "theta_10": _vec(fit.theta_10),
                "theta_11": _vec(fit.theta_11),
            },
            cov=_mat(fit.cov),
            threshold=_finite_or_none(fit.threshold),
            n_windows=int(fit.n_windows),
            hessian_rank=int(fit.hessian_rank),
            converged=bool(fit.converged),
        )
    elif isinstance(fit, LogitFit):
        base.update(
            model="logit",
            params={"beta": _vec(fit.beta)},
            cov=_mat(fit.cov),
            subset=fit.subset,
            separation=bool(fit.separation),
            converged=bool(fit.converged),
        )
        if fit.thresholds_by_class is not None:
            base["thresholds"] = [float(t) for t in fit.thresholds_by_class]
    else:
        raise ConfigError(f"cannot serialize fit of type {type(fit).__name__}")
    return base


def _intlike(key: str):
    try:
        return int(key)
    except ValueError:
        return key


def parse_fit(doc: dict):
    """Rebuild the fit object from an artifact document."""
    if not isinstance(doc, dict):
        raise SchemaError("artifact must be a JSON object")
    model = doc.get("model")
    if model not in _MODEL_NAMES:
        raise SchemaError(f"unknown artifact model {model!r}")
    if doc.get("spec_version") != SPEC_VERSION:
        raise SchemaError(
            f"unsupported artifact spec_version {doc.get('spec_version')!r}"
        )
    try:
        params = doc["params"]
        if model == "cs_tail":
            cov0, cov1 = doc["cov"]
            return CsFit(
                theta0=np.asarray(params["theta0"]),
                theta1=np.asarray(params["theta1"]),
                cov0=np.asarray(cov0),
                cov1=np.asarray(cov1),
                thresholds=tuple(float(t) for t in doc["thresholds"]),
                tail_counts=tuple(int(c) for c in doc["tail_counts"]),
                tailprob_model=TailProbModel(
                    beta0=np.asarray(params["tailprob_beta0"]),
                    beta1=np.asarray(params["tailprob_beta1"]),
                ),
                method=doc["method"],
                converged=bool(doc["converged"]),
                n_obs=int(doc["n_obs"]),
            )
        if model == "panel_fe":
            thresholds = doc.get("thresholds")
            return FeFit(
                theta_star=np.asarray(params["theta_star"]),
                cov=np.asarray(doc["cov"]),
                a_tilde={_intlike(u): float(v) for u, v in doc["a_tilde"].items()},
                correction=doc["correction"],
                dropped_units=[(_intlike(u), r) for u, r in doc["dropped_units"]],
                converged=bool(doc["converged"]),
                threshold=doc.get("threshold"),
                transform=doc["transform"],
                class_thresholds=None if thresholds is None else tuple(thresholds),
            )
        if model == "panel_conditional":
            return PanelFit(
                theta_star=np.asarray(params["theta_star"]),
                cov=np.asarray(doc["cov"]),
                threshold=float(doc["threshold"]),
                n_contributing=int(doc["n_contributing"]),
                converged=bool(doc["converged"]),
            )
        if model == "panel_dynamic":
            thr = doc.get("threshold")
            return DynFit(
                theta_01=np.asarray(params["theta_01"]),
                theta_10=np.asarray(params["theta_10"]),
                theta_11=np.asarray(params["theta_11"]),
                cov=np.asarray(doc["cov"]),
                n_windows=int(doc["n_windows"]),
                hessian_rank=int(doc["hessian_rank"]),
                converged=bool(doc["converged"]),
                threshold=float("nan") if thr is None else float(thr),
            )
        thresholds = doc.get("thresholds")
        return LogitFit(
            beta=np.asarray(params["beta"]),
            cov=np.asarray(doc["cov"]),
            subset=doc["subset"],
            separation=bool(doc["separation"]),
            converged=bool(doc["converged"]),
            thresholds_by_class=None if thresholds is None else tuple(thresholds),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed {model} artifact: {exc}") from exc


def read_fit(path: str):
    """Load and parse an artifact file; returns (fit, document)."""
    try:
        with open(path, encoding="utf-8") as handle:
            try:
                doc = json.load(handle)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: not valid JSON: {exc}") from exc
    except OSError:
        raise
    return parse_fit(doc), doc
