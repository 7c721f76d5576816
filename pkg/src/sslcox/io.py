"""CSV datasets and the JSON model file."""

from __future__ import annotations

import csv
import json

import numpy as np

from .cox import BaselineHazard, SurvivalDataset
from .exceptions import InputError
from .spline import ReparamBasis
from .sslfit import FitResult, PriorConfig, groups_from_bases

MODEL_FORMAT_VERSION = 1
REQUIRED_COLUMNS = ("time", "status")


def fmt(x) -> str:
    """Float text that round-trips exactly."""
    return repr(float(x))


def read_table(path):
    """Parse a numeric CSV with a header.

    Returns
    -------
    header : list of str
    values : ndarray, shape (n_rows, n_cols)

    Raises
    ------
    InputError
        Naming the file line and column of the first bad cell.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path}: empty file") from None
        if len(set(header)) != len(header):
            raise InputError(f"{path}: duplicate column names in header")
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputError(f"{path}: row {line_no} has {len(row)} fields, header has {len(header)}")
            vals = []
            for name, cell in zip(header, row):
                cell = cell.strip()
                try:
                    v = float(cell)
                except ValueError:
                    raise InputError(f"{path}: row {line_no}, column '{name}': cannot parse {cell!r}") from None
                if not np.isfinite(v):
                    raise InputError(f"{path}: row {line_no}, column '{name}': missing or non-finite value")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise InputError(f"{path}: no data rows")
    return header, np.array(rows, dtype=float)


def _check_survival_columns(path, header, values):
    for col in REQUIRED_COLUMNS:
        if col not in header:
            raise InputError(f"{path}: missing required column '{col}'")
    t = values[:, header.index("time")]
    s = values[:, header.index("status")]
    for i in range(values.shape[0]):
        if t[i] <= 0:
            raise InputError(f"{path}: row {i + 2}, column 'time': must be positive, got {t[i]!r}")
        if s[i] not in (0.0, 1.0):
            raise InputError(f"{path}: row {i + 2}, column 'status': must be 0 or 1, got {s[i]!r}")


def read_dataset(path, require_events: bool = True) -> SurvivalDataset:
    """Read a survival CSV: ``time``, ``status`` and predictor columns."""
    header, values = read_table(path)
    _check_survival_columns(path, header, values)
    names = [h for h in header if h not in REQUIRED_COLUMNS]
    cols = [header.index(h) for h in names]
    data = SurvivalDataset(values[:, header.index("time")], values[:, header.index("status")],
                           values[:, cols], names)
    if require_events and data.n_events == 0:
        raise InputError(f"{path}: no events (status is 0 on every row)")
    return data


def read_covariates(path, names):
    """Covariate matrix with columns ordered as ``names``; also returns the
    ``time``/``status`` columns when present (else ``None``)."""
    header, values = read_table(path)
    missing = [n for n in names if n not in header]
    if missing:
        raise InputError(f"{path}: missing predictor columns {missing}")
    X = values[:, [header.index(n) for n in names]]
    time = status = None
    if all(c in header for c in REQUIRED_COLUMNS):
        _check_survival_columns(path, header, values)
        time = values[:, header.index("time")]
        status = values[:, header.index("status")].astype(int)
    return X, time, status


def write_table(path, header, columns):
    """Write columns (sequences of equal length) as CSV; floats use
    round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_dataset(path, data: SurvivalDataset):
    cols = [data.time, data.status.tolist()] + [data.covariates[:, j] for j in range(data.p)]
    write_table(path, ["time", "status", *data.names], cols)


# ---------------------------------------------------------------- models


def model_to_dict(result: FitResult, meta: dict | None = None) -> dict:
    if result.bases is None:
        raise InputError("only models fitted with spline bases can be serialized")
    p = result.prior
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "predictors": list(result.names),
        "splines": [b.to_dict() for b in result.bases],
        "beta": result.beta.tolist(),
        "theta": result.theta.tolist(),
        "p_linear": result.p_linear.tolist(),
        "p_nonlinear": result.p_nonlinear.tolist(),
        "lambda_linear": result.lambda_linear.tolist(),
        "lambda_nonlinear": result.lambda_nonlinear.tolist(),
        "prior": {"s0": p.s0, "s1": p.s1, "a": p.a, "b": p.b, "hierarchy": p.hierarchy},
        "fit": {
            "s0": p.s0,
            "converged": bool(result.converged),
            "n_iter": int(result.n_iter),
            "deviance": float(result.deviance),
            **(meta or {}),
        },
        "baseline_hazard": {
            "event_times": result.baseline.event_times.tolist(),
            "increments": result.baseline.increments.tolist(),
        },
    }


def model_from_dict(d: dict) -> FitResult:
    version = d.get("format_version")
    if not isinstance(version, int):
        raise InputError("model file has no format_version")
    if version > MODEL_FORMAT_VERSION:
        raise InputError(f"model file format {version} is newer than supported ({MODEL_FORMAT_VERSION})")
    try:
        bases = [ReparamBasis.from_dict(s) for s in d["splines"]]
        groups = groups_from_bases(bases)
        result = FitResult(
            beta=np.asarray(d["beta"], dtype=float),
            groups=groups,
            theta=np.asarray(d["theta"], dtype=float),
            p_linear=np.asarray(d["p_linear"], dtype=float),
            p_nonlinear=np.asarray(d["p_nonlinear"], dtype=float),
            lambda_linear=np.asarray(d["lambda_linear"], dtype=float),
            lambda_nonlinear=np.asarray(d["lambda_nonlinear"], dtype=float),
            prior=PriorConfig(**d["prior"]),
            converged=bool(d["fit"]["converged"]),
            n_iter=int(d["fit"]["n_iter"]),
            deviance=float(d["fit"]["deviance"]),
            bases=bases,
            names=list(d["predictors"]),
            baseline=BaselineHazard(np.asarray(d["baseline_hazard"]["event_times"], dtype=float),
                                    np.asarray(d["baseline_hazard"]["increments"], dtype=float)),
        )
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed model file: {exc}") from None
    if groups and groups[-1].stop != result.beta.size:
        raise InputError("malformed model file: coefficient count does not match splines")
    return result


def save_model(path, result: FitResult, meta: dict | None = None):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(result, meta), fh, indent=1)
        fh.write("\n")


def load_model(path) -> FitResult:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(d)
