"""Inverse squared-distance weighted exposure from point sources."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .errors import DataError, ParameterError


@dataclass(frozen=True)
class Facility:
    id: object
    x: float
    y: float
    app: float

    def __post_init__(self):
        if not self.app > 0:
            raise DataError(f"facility {self.id!r} needs a positive production amount")


@dataclass(frozen=True)
class ExposureAssignment:
    unit_id: object
    zb: int
    zc: float
    contributing_facility_ids: tuple = ()


def compute_exposure(unit_ids, unit_coords, facilities, buffer, distance_scale=1.0):
    """Weighted average production of facilities within ``buffer`` of each unit.

    ``distance_scale`` converts coordinate distances into the units of
    ``buffer`` (e.g. km per coordinate unit). Weights are inverse squared
    distances, so their scale cancels. A facility exactly at a unit raises
    :class:`DataError`.
    """
    if not buffer > 0:
        raise ParameterError("buffer must be > 0")
    unit_coords = np.asarray(unit_coords, float)
    facilities = list(facilities)
    out = []
    if not facilities:
        return [ExposureAssignment(uid, 0, 0.0) for uid in unit_ids]
    fxy = np.array([[f.x, f.y] for f in facilities], float)
    app = np.array([f.app for f in facilities], float)
    tree = cKDTree(fxy)
    radius = buffer / distance_scale
    hits = tree.query_ball_point(unit_coords, r=radius * (1 + 1e-12))
    for uid, xy, hit in zip(unit_ids, unit_coords, hits):
        if not hit:
            out.append(ExposureAssignment(uid, 0, 0.0))
            continue
        hit = np.array(sorted(hit), dtype=int)
        d = np.hypot(*(fxy[hit] - xy).T) * distance_scale
        inside = d <= buffer
        hit, d = hit[inside], d[inside]
        if len(hit) == 0:
            out.append(ExposureAssignment(uid, 0, 0.0))
            continue
        if np.any(d == 0):
            f = facilities[hit[np.flatnonzero(d == 0)[0]]]
            raise DataError(f"facility {f.id!r} coincides with unit {uid!r}; distance is zero")
        wts = 1.0 / d**2
        xct = float(np.sum(app[hit] * wts) / np.sum(wts))
        out.append(ExposureAssignment(uid, 1, xct, tuple(facilities[i].id for i in hit)))
    return out


def read_facilities(path) -> list:
    df = pd.read_csv(path)
    missing = [c for c in ("id", "x", "y", "app") if c not in df.columns]
    if missing:
        raise DataError(f"facility CSV {path}: missing column(s) {missing}")
    return [Facility(r.id, float(r.x), float(r.y), float(r.app)) for r in df.itertuples(index=False)]


def assignments_frame(assignments) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "unit_id": [a.unit_id for a in assignments],
            "zb": [a.zb for a in assignments],
            "zc": [a.zc for a in assignments],
        }
    )
