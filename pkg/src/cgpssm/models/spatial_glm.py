"""GLMs with a penalized low-rank thin-plate spline over coordinates.

The smooth uses radial functions ``r^2 log r`` centred on knots chosen by
farthest-point sampling, plus linear terms in x and y. The radial part is
constrained orthogonal to the polynomial null space and penalized by the
thin-plate bending energy; the linear terms get a ridge penalty with the
same multiplier, so a very large penalty shrinks the whole smooth to zero
and leaves the covariate-only GLM.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConvergenceError, DataError, ParameterError
from .glm import (
    FAMILIES,
    FittedModel,
    _inverse_link,
    _validate_response,
    check_rank,
    deviance,
    irls,
)

GCV_GRID = tuple(np.logspace(-4, 4, 20))
MAX_KNOTS = 40


def _tps(r):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r > 0, r * r * np.log(np.where(r > 0, r, 1.0)), 0.0)
    return out


def farthest_point_knots(coords, n_knots):
    """Deterministic farthest-point sampling starting at the point nearest the centroid."""
    coords = np.asarray(coords, float)
    uniq = np.unique(coords, axis=0)
    n_knots = min(n_knots, len(uniq))
    start = int(np.argmin(np.sum((uniq - uniq.mean(axis=0)) ** 2, axis=1)))
    chosen = [start]
    dist = np.sum((uniq - uniq[start]) ** 2, axis=1)
    for _ in range(n_knots - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.sum((uniq - uniq[nxt]) ** 2, axis=1))
    return uniq[chosen]


@dataclass
class RadialBasis:
    """Spatial basis description; evaluates design columns at any coordinates."""

    knots: np.ndarray
    center: np.ndarray
    scale: float
    constraint: np.ndarray  # knots x (knots - 3), spans {d : T'd = 0}

    @classmethod
    def build(cls, coords, n_knots):
        coords = np.asarray(coords, float)
        center = coords.mean(axis=0)
        scale = float(np.sqrt(np.mean(np.sum((coords - center) ** 2, axis=1)))) or 1.0
        knots = farthest_point_knots(coords, n_knots)
        kn = (knots - center) / scale
        T = np.column_stack([np.ones(len(kn)), kn])
        q, _ = np.linalg.qr(T, mode="complete")
        return cls(knots=knots, center=center, scale=scale, constraint=q[:, 3:])

    @property
    def n_columns(self) -> int:
        return 2 + self.constraint.shape[1]

    def basis(self, coords) -> np.ndarray:
        c = (np.asarray(coords, float) - self.center) / self.scale
        kn = (self.knots - self.center) / self.scale
        r = np.sqrt(np.sum((c[:, None, :] - kn[None, :, :]) ** 2, axis=2))
        return np.hstack([c, _tps(r) @ self.constraint])

    def penalty(self) -> np.ndarray:
        kn = (self.knots - self.center) / self.scale
        r = np.sqrt(np.sum((kn[:, None, :] - kn[None, :, :]) ** 2, axis=2))
        omega = self.constraint.T @ _tps(r) @ self.constraint
        omega = 0.5 * (omega + omega.T)
        # bending energy is conditionally positive definite; clear round-off
        vals, vecs = np.linalg.eigh(omega)
        vals = np.clip(vals, 0.0, None)
        omega = (vecs * vals) @ vecs.T
        omega /= vals.max()
        m = 2 + omega.shape[0]
        S = np.zeros((m, m))
        S[:2, :2] = np.eye(2)
        S[2:, 2:] = omega
        return S

    def to_dict(self) -> dict:
        return {
            "kind": "thin_plate_radial",
            "knots": self.knots.tolist(),
            "center": self.center.tolist(),
            "scale": self.scale,
            "constraint": self.constraint.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            knots=np.asarray(doc["knots"], float),
            center=np.asarray(doc["center"], float),
            scale=float(doc["scale"]),
            constraint=np.asarray(doc["constraint"], float),
        )


def _fit_at(family, Xfull, y, S_full, lam_scale, lam, beta0, weights):
    beta, history, converged, info = irls(
        family, Xfull, y, weights=weights, penalty_matrix=lam * lam_scale * S_full, beta0=beta0
    )
    A = info["xtwx"]
    F = info["inv"] @ A  # influence on coefficients
    edf_cols = np.diag(F)
    mu = _inverse_link(family, Xfull @ beta)
    dev = deviance(family, y, mu, weights)
    return beta, history, converged, info, edf_cols, dev


def fit_spatial_glm(X, y, family, coords, column_names=None, penalty=None,
                    n_knots=None, grid=GCV_GRID, weights=None) -> FittedModel:
    """GLM with covariates ``X`` plus a penalized spatial smooth of ``coords``.

    The penalty multiplier is picked from ``grid`` by minimizing the
    generalized cross-validation score ``n D / (n - edf)^2`` unless
    ``penalty`` is given. Multipliers are relative: internally each is
    scaled by the mean diagonal of the unpenalized information matrix, so
    a value of 1 is comparable to one observation's worth of data per
    coefficient.
    """
    if family not in FAMILIES:
        raise ParameterError(f"family must be one of {FAMILIES}, got {family!r}")
    X = np.asarray(X, float)
    y = np.asarray(y, float)
    coords = np.asarray(coords, float)
    if len(coords) != len(y) or X.shape[0] != len(y):
        raise DataError("X, y and coords must have the same number of rows")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(coords)):
        raise DataError("design and coordinates must be finite")
    n_loc = len(np.unique(coords, axis=0))
    if n_loc < 10:
        raise DataError(f"need >= 10 distinct coordinate locations, got {n_loc}")
    _validate_response(family, y)
    names = tuple(column_names) if column_names is not None else tuple(f"c{i}" for i in range(X.shape[1]))
    check_rank(X, names)

    if n_knots is None:
        n_knots = max(4, min(MAX_KNOTS, len(y) // 4))
    smooth = RadialBasis.build(coords, n_knots)
    B = smooth.basis(coords)
    Xfull = np.hstack([X, B])
    p = X.shape[1]
    S_full = np.zeros((Xfull.shape[1],) * 2)
    S_full[p:, p:] = smooth.penalty()

    # penalty scale: information per coefficient at a rough starting point
    w0 = np.ones(len(y)) if weights is None else np.asarray(weights, float)
    if family == "logistic":
        w0 = w0 * max(y.mean() * (1 - y.mean()), 1e-3)
    elif family == "poisson":
        w0 = w0 * max(y.mean(), 1e-3)
    bb = np.einsum("ij,ij->j", B, B * w0[:, None])
    lam_scale = float(np.mean(bb))

    n = len(y) if weights is None else float(np.sum(weights))
    candidates = [penalty] if penalty is not None else list(grid)
    best = None
    beta0 = None
    # start from heavy penalty so warm starts move from the simple model outward
    for lam in sorted(candidates, reverse=True):
        try:
            beta, history, converged, info, edf_cols, dev = _fit_at(
                family, Xfull, y, S_full, lam_scale, lam, beta0, weights
            )
        except ConvergenceError:
            continue
        if not converged:
            continue
        beta0 = beta
        edf = float(edf_cols.sum())
        gcv = n * dev / max(n - edf, 1e-8) ** 2
        if best is None or gcv < best[0]:
            best = (gcv, lam, beta, history, info, edf_cols, dev)
    if best is None:
        raise ConvergenceError("penalized IRLS failed for every penalty value")
    gcv, lam, beta, history, info, edf_cols, dev = best

    model = FittedModel(
        family=family,
        coefficients=beta,
        column_names=names + tuple(f"s{j}" for j in range(B.shape[1])),
        converged=True,
        iterations=len(history),
        deviance=dev,
        deviance_history=history,
        smooth=smooth,
        penalty=float(lam),
        edf=float(edf_cols[p:].sum()),
    )
    if family == "linear":
        total_edf = float(edf_cols.sum())
        dof = n - total_edf
        resid = y - Xfull @ beta
        rss = float(np.sum(w0 * resid**2)) if weights is not None else float(resid @ resid)
        sd = float(np.sqrt(rss / dof)) if dof > 0 else 0.0
        model.residual_sd = sd
        model.degenerate = sd <= 1e-10 * max(1.0, float(np.abs(y).max()))
        model.covariance = info["inv"] @ info["xtwx"] @ info["inv"] * sd**2
    else:
        model.covariance = info["inv"] @ info["xtwx"] @ info["inv"]
    model.gcv = gcv
    return model
