"""Spatial primitives: distances, Matérn correlation and semi-variograms.

Coordinates live in a planar, standardized frame; no geodesic corrections
are applied anywhere in the package.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, special
from scipy.spatial.distance import pdist

from .errors import DataError, ParameterError

__all__ = [
    "Location",
    "MaternParams",
    "Variogram",
    "VariogramFit",
    "euclidean_distance",
    "pairwise_distances",
    "matern_correlation",
    "default_bin_edges",
    "empirical_semivariogram",
    "fit_matern_variogram",
    "variogram_objective",
    "write_variogram_csv",
    "read_variogram_csv",
]


@dataclass(frozen=True)
class Location:
    id: object
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ParameterError(f"non-finite coordinates for location {self.id!r}")


@dataclass(frozen=True)
class MaternParams:
    """Matérn correlation parameters.

    ``smoothness`` is the shape parameter k, ``range`` the scale pi in
    ``rho(d) = 2^(1-k)/Gamma(k) * (d/pi)^k * K_k(d/pi)``.
    """

    smoothness: float
    range: float
    sill: float = 1.0
    nugget: float = 0.0

    def __post_init__(self):
        if not self.smoothness > 0:
            raise ParameterError(f"smoothness must be > 0, got {self.smoothness}")
        if not self.range > 0:
            raise ParameterError(f"range must be > 0, got {self.range}")
        if not self.sill > 0:
            raise ParameterError(f"sill must be > 0, got {self.sill}")
        if not self.nugget >= 0:
            raise ParameterError(f"nugget must be >= 0, got {self.nugget}")


@dataclass(frozen=True)
class Variogram:
    bin_centers: np.ndarray
    semivariances: np.ndarray
    pair_counts: np.ndarray

    def __post_init__(self):
        n = len(self.bin_centers)
        if len(self.semivariances) != n or len(self.pair_counts) != n:
            raise DataError("variogram columns must have equal length")
        if n > 1 and np.any(np.diff(self.bin_centers) <= 0):
            raise DataError("bin centers must be strictly increasing")
        if np.any(self.semivariances < 0):
            raise DataError("semivariances must be non-negative")

    @property
    def nonempty(self) -> np.ndarray:
        return self.pair_counts > 0


def euclidean_distance(a: Location, b: Location) -> float:
    return math.hypot(a.x - b.x, a.y - b.y)


def pairwise_distances(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords, dtype=float)
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def matern_correlation(d, params: MaternParams):
    """Matérn correlation at distance(s) ``d`` (nugget and sill ignored).

    Works elementwise on arrays. Values below ~1e-300 underflow to 0 for
    very large ``d/range`` which is harmless for correlation matrices.
    """
    if not isinstance(params, MaternParams):
        raise ParameterError("params must be a MaternParams instance")
    d = np.asarray(d, dtype=float)
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ParameterError("distances must be finite and non-negative")
    k = params.smoothness
    r = d / params.range
    out = np.ones_like(r)
    pos = r > 0
    if np.any(pos):
        rp = r[pos]
        if k == 0.5:
            val = np.exp(-rp)
        else:
            # Work in logs so ``r^k`` and ``K_k(r)`` do not overflow separately.
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                log_val = (
                    (1.0 - k) * math.log(2.0)
                    - special.gammaln(k)
                    + k * np.log(rp)
                    + np.log(special.kve(k, rp))
                    - rp
                )
                val = np.exp(log_val)
            val = np.where(np.isfinite(val), val, 0.0)
        out[pos] = np.clip(val, 0.0, 1.0)
    return out if out.ndim else float(out)


def default_bin_edges(coords: np.ndarray, n_bins: int = 15) -> np.ndarray:
    """Equal-width bins from 0 up to half of the maximum pairwise distance."""
    dmax = pdist(np.asarray(coords, dtype=float)).max()
    return np.linspace(0.0, dmax / 2.0, n_bins + 1)


def empirical_semivariogram(values, coords, bin_edges=None) -> Variogram:
    """Classical (Matheron) semi-variogram estimator.

    A pair at distance ``h`` falls in bin ``j`` when
    ``edges[j] < h <= edges[j+1]``; the first bin also includes its left
    edge so coincident points at distance zero are not silently lost when
    the first edge is 0. Bin centers are midpoints of the edges.
    """
    values = np.asarray(values, dtype=float)
    coords = np.asarray(coords, dtype=float)
    if len(values) < 2 or len(values) != len(coords):
        raise DataError("need >= 2 locations with one value each")
    edges = default_bin_edges(coords) if bin_edges is None else np.asarray(bin_edges, float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ParameterError("bin_edges must be strictly increasing with >= 2 entries")

    iu, ju = np.triu_indices(len(values), k=1)
    h = np.hypot(coords[iu, 0] - coords[ju, 0], coords[iu, 1] - coords[ju, 1])
    sq = (values[iu] - values[ju]) ** 2
    idx = np.searchsorted(edges, h, side="left") - 1
    idx[h == edges[0]] = 0
    ok = (idx >= 0) & (idx < len(edges) - 1)
    nb = len(edges) - 1
    counts = np.bincount(idx[ok], minlength=nb)
    sums = np.bincount(idx[ok], weights=sq[ok], minlength=nb)
    if counts.sum() == 0:
        raise DataError("all variogram bins are empty")
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = np.where(counts > 0, 0.5 * sums / np.maximum(counts, 1), 0.0)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return Variogram(centers, gamma, counts.astype(int))


@dataclass(frozen=True)
class VariogramFit:
    smoothness: float
    range: float
    sill: float
    nugget: float
    objective: float
    degenerate: bool = False
    grid_objectives: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def params(self) -> MaternParams:
        if self.degenerate:
            raise DataError("degenerate variogram has no valid Matérn parameters")
        return MaternParams(self.smoothness, self.range, self.sill, self.nugget)

    def to_dict(self) -> dict:
        return {
            "smoothness": self.smoothness,
            "range": self.range,
            "sill": self.sill,
            "nugget": self.nugget,
            "objective": self.objective,
            "degenerate": self.degenerate,
        }


SMOOTHNESS_GRID = (0.1, 0.5, 1.0, 2.0)


def _profile_sill_nugget(corr, gamma, weights):
    # gamma ~ nugget + sill * (1 - corr), both coefficients >= 0
    design = np.column_stack([np.ones_like(corr), 1.0 - corr])
    sw = np.sqrt(weights)
    coef, _ = optimize.nnls(design * sw[:, None], gamma * sw)
    resid = gamma - design @ coef
    return coef[1], coef[0], float(np.sum(weights * resid**2))


def variogram_objective(v: Variogram, params: MaternParams) -> float:
    """Pair-count weighted squared error of the model against ``v``."""
    m = v.nonempty
    model = params.nugget + params.sill * (1.0 - matern_correlation(v.bin_centers[m], params))
    return float(np.sum(v.pair_counts[m] * (v.semivariances[m] - model) ** 2))


def fit_matern_variogram(v: Variogram) -> VariogramFit:
    """Weighted least-squares Matérn fit to an empirical variogram.

    Sill and nugget enter linearly and are profiled out by non-negative
    least squares, leaving a two-dimensional search over (smoothness,
    range). The search starts on a grid of smoothness values and the
    quartiles of the non-empty bin centers, then the best grid point is
    refined in log-parameter space. The returned objective is never worse
    than any grid point.
    """
    m = v.nonempty
    if m.sum() < 3:
        raise DataError("need at least 3 non-empty bins to fit a variogram")
    h = np.asarray(v.bin_centers, float)[m]
    gamma = np.asarray(v.semivariances, float)[m]
    w = np.asarray(v.pair_counts, float)[m]
    order = np.argsort(h)
    h, gamma, w = h[order], gamma[order], w[order]

    if np.all(gamma <= 0):
        return VariogramFit(SMOOTHNESS_GRID[1], float(np.median(h)), 0.0, 0.0, 0.0, degenerate=True)

    def profile(log_k, log_pi):
        k, pi = math.exp(log_k), math.exp(log_pi)
        if not (1e-3 < k < 50 and 1e-8 < pi < 1e8):
            return math.inf, 0.0, 0.0
        corr = matern_correlation(h, MaternParams(k, pi))
        sill, nugget, obj = _profile_sill_nugget(corr, gamma, w)
        return obj, sill, nugget

    ranges = np.quantile(h, [0.25, 0.5, 0.75])
    grid = {}
    for k in SMOOTHNESS_GRID:
        for pi in ranges:
            grid[(k, float(pi))] = profile(math.log(k), math.log(pi))[0]
    k0, pi0 = min(grid, key=grid.get)
    best = (grid[(k0, pi0)], math.log(k0), math.log(pi0))

    scale = max(float(np.sum(w * gamma**2)), 1e-300)
    res = optimize.minimize(
        lambda p: profile(p[0], p[1])[0] / scale,
        x0=[best[1], best[2]],
        method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-16, "maxiter": 4000, "maxfev": 8000},
    )
    if res.fun * scale < best[0]:
        best = (res.fun * scale, res.x[0], res.x[1])
    obj, sill, nugget = profile(best[1], best[2])
    if sill <= 0:
        return VariogramFit(math.exp(best[1]), math.exp(best[2]), 0.0, nugget, obj, True, grid)
    return VariogramFit(math.exp(best[1]), math.exp(best[2]), sill, nugget, obj, False, grid)


def write_variogram_csv(v: Variogram, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "semivariance", "pair_count"])
        for c, g, n in zip(v.bin_centers, v.semivariances, v.pair_counts):
            writer.writerow([repr(float(c)), repr(float(g)), int(n)])


def read_variogram_csv(path) -> Variogram:
    with open(Path(path), newline="") as fh:
        rows = list(csv.DictReader(fh))
    return Variogram(
        np.array([float(r["bin_center"]) for r in rows]),
        np.array([float(r["semivariance"]) for r in rows]),
        np.array([int(r["pair_count"]) for r in rows]),
    )
