"""Propensity, conditional dose density and their product.

For a positive dose ``w`` the generalized propensity score factorizes as

    f(Z^c = w | C) = P(Z^b = 1 | C) * f(Z^c = w | C, Z^b = 1)

so each unit's score at a dose is its propensity times a normal density
centred on the dose model's prediction for that unit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError
from .models.boosting import BoostedClassifier
from .models.glm import FittedModel, fit_glm
from .models.spatial_glm import fit_spatial_glm

PS_CLAMP = 1e-6

__all__ = [
    "GpsRecord",
    "DoseModel",
    "estimate_ps",
    "estimate_cgps",
    "compose_gps",
    "fit_ps_model",
    "fit_cgps_model",
    "build_gps_records",
    "write_gps_csv",
    "read_gps_csv",
]


@dataclass(frozen=True, slots=True)
class GpsRecord:
    unit_id: object
    stratum_id: int
    w: float
    ps: float
    cgps: float
    gps: float
    exposed: bool = False


def _with_intercept(X):
    return np.column_stack([np.ones(len(X)), X])


def estimate_ps(model, X, coords=None) -> np.ndarray:
    """Propensity scores clamped to ``[1e-6, 1 - 1e-6]``.

    ``X`` holds covariates without an intercept column; one is added for
    GLM-type models.
    """
    X = np.asarray(X, float)
    if isinstance(model, BoostedClassifier):
        if not model.trees and model.n_trees:
            raise ParameterError("boosted model is untrained")
        feats = X if coords is None else np.hstack([X, np.asarray(coords, float)])
        p = model.predict_proba(feats)
    elif isinstance(model, FittedModel):
        if model.family != "logistic":
            raise ParameterError("propensity model must be logistic")
        p = model.predict(_with_intercept(X), coords)
    else:
        raise ParameterError("propensity model is not a fitted model")
    return np.clip(p, PS_CLAMP, 1.0 - PS_CLAMP)


def normal_density(w, mean, sd):
    z = (np.asarray(w, float) - mean) / sd
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi * sd * sd)


@dataclass(frozen=True)
class DoseModel:
    """A linear dose model fitted on exposed units, with optional log scale."""

    model: FittedModel
    log_dose: bool = False

    def mean(self, X, coords=None) -> np.ndarray:
        return self.model.predict(_with_intercept(np.asarray(X, float)), coords)

    @property
    def sd(self) -> float:
        return float(self.model.residual_sd)

    def transform(self, w):
        w = np.asarray(w, float)
        if self.log_dose:
            if np.any(w <= 0):
                raise DataError("log-scale dose model needs positive doses")
            return np.log(w)
        return w


def _check_cgps_model(model):
    if isinstance(model, DoseModel):
        model = model.model
    if model.family != "linear":
        raise ParameterError("CGPS model must be a linear (gaussian) fit")
    if model.subset != "exposed":
        raise ParameterError("CGPS model must be fitted on exposed units only")
    if model.residual_sd is None or not model.residual_sd > 0 or model.degenerate:
        raise DataError("CGPS model has zero residual standard deviation")


def estimate_cgps(cgps_model, X, w, coords=None) -> np.ndarray:
    """Normal density of dose ``w`` around each unit's predicted mean dose."""
    dose = cgps_model if isinstance(cgps_model, DoseModel) else DoseModel(cgps_model)
    _check_cgps_model(dose)
    mu = dose.mean(X, coords)
    return normal_density(dose.transform(w), mu, dose.sd)


def compose_gps(ps, cgps):
    if np.ndim(ps) == 0 and np.ndim(cgps) == 0:
        return float(ps) * float(cgps)
    return np.asarray(ps, float) * np.asarray(cgps, float)


def fit_ps_model(dataset, covariates, kind="spatial_glm", seed=0, hyper_grid=None, n_folds=10):
    """Fit a propensity model for ``zb``.

    ``kind`` is ``"spatial_glm"`` (logistic with spatial smooth),
    ``"boosted"`` (trees with coordinates as features) or ``"glm"``
    (plain logistic on the listed covariates, e.g. the true model).
    """
    X = dataset.matrix(covariates)
    y = dataset.zb.astype(float)
    if kind == "glm":
        return fit_glm(_with_intercept(X), y, "logistic", ("intercept", *covariates))
    if kind == "spatial_glm":
        return fit_spatial_glm(_with_intercept(X), y, "logistic", dataset.coords,
                               ("intercept", *covariates))
    if kind == "boosted":
        from .models.boosting import fit_boosted_classifier

        return fit_boosted_classifier(X, y, dataset.coords, hyper_grid=hyper_grid,
                                      n_folds=n_folds, seed=seed,
                                      feature_names=(*covariates, "x", "y"))
    raise ParameterError(f"unknown propensity model kind {kind!r}")


def fit_cgps_model(dataset, covariates, kind="spatial_glm", log_dose=False) -> DoseModel:
    """Fit the dose model on exposed units only (``kind``: spatial_glm | glm)."""
    idx = dataset.exposed
    p = len(covariates) + 1
    if len(idx) <= p:
        raise DataError(f"only {len(idx)} exposed units; cannot fit a dose model with {p} terms")
    X = _with_intercept(dataset.matrix(covariates)[idx])
    w = dataset.zc[idx]
    w = np.log(w) if log_dose else w
    names = ("intercept", *covariates)
    if kind == "glm":
        model = fit_glm(X, w, "linear", names)
    elif kind == "spatial_glm":
        model = fit_spatial_glm(X, w, "linear", dataset.coords[idx], names)
    else:
        raise ParameterError(f"unknown CGPS model kind {kind!r}")
    model.subset = "exposed"
    dose = DoseModel(model, log_dose)
    _check_cgps_model(dose)
    return dose


def build_gps_records(strata, ps, dose_model: DoseModel, dataset, covariates):
    """One record per (unit, stratum) membership.

    The exposed unit is scored at its own dose; each candidate is scored
    at the stratum's dose. ``ps`` is indexed like the dataset rows.
    """
    _check_cgps_model(dose_model)
    ps = np.asarray(ps, float)
    coords = dataset.coords if dose_model.model.smooth is not None else None
    mu = dose_model.mean(dataset.matrix(covariates), coords)
    sd = dose_model.sd
    index = dataset.index_of()
    records = []
    for s in strata:
        w = float(s.w)
        tw = float(dose_model.transform(w))
        e = index[s.exposed_id]
        c = float(normal_density(tw, mu[e], sd))
        records.append(GpsRecord(s.exposed_id, s.stratum_id, w, float(ps[e]), c,
                                 compose_gps(float(ps[e]), c), True))
        if s.candidate_ids:
            rows = np.array([index[c_id] for c_id in s.candidate_ids])
            dens = normal_density(tw, mu[rows], sd)
            for c_id, r, d in zip(s.candidate_ids, rows, dens):
                records.append(GpsRecord(c_id, s.stratum_id, w, float(ps[r]), float(d),
                                         compose_gps(float(ps[r]), float(d)), False))
    return records


def write_gps_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["unit_id", "stratum_id", "w", "ps", "cgps", "gps", "exposed"])
        for r in records:
            writer.writerow([r.unit_id, r.stratum_id, repr(r.w), repr(r.ps), repr(r.cgps),
                             repr(r.gps), int(r.exposed)])


def read_gps_csv(path, id_type=int):
    with open(path, newline="") as fh:
        return [
            GpsRecord(id_type(row["unit_id"]), int(row["stratum_id"]), float(row["w"]),
                      float(row["ps"]), float(row["cgps"]), float(row["gps"]),
                      bool(int(row.get("exposed", 0))))
            for row in csv.DictReader(fh)
        ]
