"""CSV/JSON readers and writers with line-numbered schema errors."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .datagen import Dataset
from .errors import DataError

REQUIRED = ("id", "x", "y")
OPTIONAL = ("u", "zb", "zc", "outcome")


def _parse_id(text):
    try:
        return int(text)
    except ValueError:
        return text


def _float(path, lineno, col, text):
    try:
        val = float(text)
    except (TypeError, ValueError):
        raise DataError(f"{path} line {lineno}: column {col!r}: cannot parse {text!r} as a number") from None
    if not math.isfinite(val):
        raise DataError(f"{path} line {lineno}: column {col!r}: non-finite value {text!r}")
    return val


def read_units_csv(path, covariates=(), require=("outcome",), exposure=None,
                   need_exposure=True) -> Dataset:
    """Read a units table.

    ``covariates`` lists the columns used as measured confounders. When
    ``exposure`` (a mapping unit id -> (zb, zc)) is given it replaces any
    zb/zc columns. Otherwise both columns must be present unless
    ``need_exposure`` is false, in which case missing exposure reads as 0.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = list(REQUIRED) + list(covariates) + list(require)
        from_columns = exposure is None and ("zb" in header or "zc" in header or need_exposure)
        if from_columns:
            needed += ["zb", "zc"]
        missing = [c for c in dict.fromkeys(needed) if c not in header]
        if missing:
            raise DataError(f"{path} line 1: missing required column(s): {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: no data rows")

    ids, coords, cov, zb, zc, y, u = [], [], {c: [] for c in covariates}, [], [], [], []
    seen = set()
    has_u = "u" in header
    for lineno, row in enumerate(rows, start=2):
        uid = _parse_id(row["id"])
        if uid in seen:
            raise DataError(f"{path} line {lineno}: duplicate id {uid!r}")
        seen.add(uid)
        ids.append(uid)
        coords.append((_float(path, lineno, "x", row["x"]), _float(path, lineno, "y", row["y"])))
        for c in covariates:
            cov[c].append(_float(path, lineno, c, row[c]))
        if from_columns:
            b = _float(path, lineno, "zb", row["zb"])
            if b not in (0.0, 1.0):
                raise DataError(f"{path} line {lineno}: column 'zb' must be 0 or 1, got {row['zb']!r}")
            zb.append(int(b))
            zc.append(_float(path, lineno, "zc", row["zc"]))
            if (zb[-1] == 1) != (zc[-1] > 0) or zc[-1] < 0:
                raise DataError(f"{path} line {lineno}: zc must be > 0 exactly when zb == 1")
        elif exposure is None:
            zb.append(0)
            zc.append(0.0)
        else:
            if uid not in exposure:
                raise DataError(f"{path} line {lineno}: no exposure assignment for id {uid!r}")
            b, c_ = exposure[uid]
            zb.append(int(b))
            zc.append(float(c_))
        if "outcome" in header and row.get("outcome", "") != "":
            y.append(_float(path, lineno, "outcome", row["outcome"]))
        else:
            y.append(0.0 if "outcome" not in require else _float(path, lineno, "outcome", row.get("outcome")))
        if has_u:
            u.append(_float(path, lineno, "u", row["u"]))
    id_arr = np.array(ids, dtype=object if any(isinstance(i, str) for i in ids) else int)
    return Dataset(
        ids=id_arr,
        coords=np.array(coords, float),
        covariates={c: np.array(v, float) for c, v in cov.items()},
        zb=np.array(zb, int),
        zc=np.array(zc, float),
        outcome=np.array(y, float),
        u=np.array(u, float) if has_u else None,
    )


def write_units_csv(dataset: Dataset, path) -> None:
    dataset.to_frame().to_csv(path, index=False, float_format="%.17g")


def write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and math.isinf(o):
        return "inf"
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def read_column(path, name) -> np.ndarray:
    """One numeric column of a CSV, with line-numbered parse errors."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if name not in (reader.fieldnames or []):
            raise DataError(f"{path} line 1: missing required column(s): {name}")
        return np.array([_float(path, i, name, row[name]) for i, row in enumerate(reader, start=2)])
