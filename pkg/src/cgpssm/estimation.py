"""ATT from matched pairs, comparator estimators and Monte Carlo metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CgpsError, DataError, NumericalError, ParameterError
from .gps import normal_density
from .models.conditional import fit_conditional_poisson
from .models.glm import fit_glm
from .models.spatial_glm import fit_spatial_glm

Z95 = 1.959963984540054
TRUE_COEFFICIENT = 0.03
MAX_FAILED_FRACTION = 0.05


@dataclass
class AttEstimate:
    coefficient: float
    se: float
    ci_low: float
    ci_high: float
    n_bootstrap: int = 0
    bootstrap_sd: float | None = None
    n_failed: int = 0
    n_pairs: int | None = None
    scale: str = "per_unit"

    @classmethod
    def from_coef(cls, coef, se, **extra):
        return cls(float(coef), float(se), float(coef - Z95 * se), float(coef + Z95 * se), **extra)

    def covers(self, value) -> bool:
        return self.ci_low <= value <= self.ci_high

    def rescaled(self, factor, scale) -> "AttEstimate":
        """Express the effect per ``factor`` units of dose (e.g. one SD)."""
        bsd = None if self.bootstrap_sd is None else self.bootstrap_sd * factor
        return AttEstimate.from_coef(self.coefficient * factor, self.se * factor,
                                     n_bootstrap=self.n_bootstrap, bootstrap_sd=bsd,
                                     n_failed=self.n_failed, n_pairs=self.n_pairs, scale=scale)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


def pair_arrays(pairs, dataset):
    """Stacked (dose, outcome, stratum) arrays: exposed row then unexposed row per pair."""
    index = dataset.index_of()
    e = np.array([index[p.exposed_id] for p in pairs], dtype=int)
    u = np.array([index[p.unexposed_id] for p in pairs], dtype=int)
    return dataset.zc[e], dataset.outcome[e], dataset.zc[u], dataset.outcome[u]


def _fit_pairs(z_e, y_e, z_u, y_u):
    k = len(z_e)
    z = np.concatenate([z_e, z_u])
    y = np.concatenate([y_e, y_u])
    strata = np.concatenate([np.arange(k), np.arange(k)])
    fit = fit_conditional_poisson(z[:, None], y, strata, ("zc",))
    return float(fit.coefficients[0]), float(fit.standard_errors[0])


def bootstrap_att(pairs, dataset, B=500, seed=0, resample=True) -> AttEstimate:
    """Bootstrap the stratum-conditional Poisson fit over matched pairs.

    Each replicate draws pairs with replacement (every draw is its own
    stratum) and fits the outcome on the dose with stratum intercepts
    eliminated. Reported are the mean coefficient and the mean model-based
    standard error over replicates; the SD of the replicate coefficients
    is kept as ``bootstrap_sd``. ``resample=False`` refits the original
    pairs in every replicate.
    """
    pairs = list(pairs)
    if not pairs:
        raise DataError("no matched pairs to estimate from")
    if B < 1:
        raise DataError("B must be >= 1")
    z_e, y_e, z_u, y_u = pair_arrays(pairs, dataset)
    k = len(pairs)
    rng = np.random.default_rng(seed)
    coefs, ses = [], []
    failed = 0
    for _ in range(B):
        idx = rng.integers(0, k, size=k) if resample else np.arange(k)
        try:
            c, s = _fit_pairs(z_e[idx], y_e[idx], z_u[idx], y_u[idx])
        except CgpsError:
            failed += 1
            continue
        if not (math.isfinite(c) and math.isfinite(s)):
            failed += 1
            continue
        coefs.append(c)
        ses.append(s)
    if not coefs:
        raise NumericalError("every bootstrap refit failed")
    if failed / B >= MAX_FAILED_FRACTION and failed > 0:
        raise NumericalError(f"{failed} of {B} bootstrap refits failed (limit 5%)")
    coefs = np.asarray(coefs)
    bsd = float(np.std(coefs, ddof=1)) if len(coefs) > 1 else 0.0
    return AttEstimate.from_coef(coefs.mean(), float(np.mean(ses)), n_bootstrap=B,
                                 bootstrap_sd=bsd, n_failed=failed, n_pairs=k)


def _design(dataset, names):
    return np.column_stack([np.ones(dataset.n), dataset.zc, dataset.matrix(names)])


def unadjusted_poisson(dataset, covariates=("x1", "x2", "x3")) -> AttEstimate:
    """Poisson regression of the outcome on dose and observed covariates only."""
    X = _design(dataset, list(covariates))
    fit = fit_glm(X, dataset.outcome, "poisson", ("intercept", "zc", *covariates))
    return AttEstimate.from_coef(fit.coefficients[1], fit.standard_errors[1])


def ipw_weights(dataset, covariates=("x1", "x2", "x3"), gps_model="spatial_glm", truncate=0.99):
    """Stabilized continuous-dose weights ignoring the binary exposure status.

    A single normal dose model is fitted over all units; the weight is the
    marginal normal density of the dose over the conditional one, cut at
    the ``truncate`` quantile.
    """
    names = list(covariates)
    X = np.column_stack([np.ones(dataset.n), dataset.matrix(names)])
    zc = dataset.zc
    if gps_model == "spatial_glm":
        model = fit_spatial_glm(X, zc, "linear", dataset.coords, ("intercept", *names))
        mu = model.predict(X, dataset.coords)
    elif gps_model == "glm":
        model = fit_glm(X, zc, "linear", ("intercept", *names))
        mu = model.predict(X)
    else:
        raise ParameterError(f"unknown GPS model {gps_model!r}")
    sd = model.residual_sd
    marg_sd = float(np.std(zc, ddof=1))
    if not (sd and sd > 0 and marg_sd > 0):
        raise NumericalError("degenerate dose density for IPW weights")
    cond = normal_density(zc, mu, sd)
    marg = normal_density(zc, zc.mean(), marg_sd)
    with np.errstate(divide="ignore"):
        w = marg / np.maximum(cond, 1e-300)
    cap = float(np.quantile(w, truncate))
    return np.minimum(w, cap)


def naive_ipw_att(dataset, covariates=("x1", "x2", "x3"), gps_model="spatial_glm",
                  weights=None) -> AttEstimate:
    """Weighted Poisson regression of the outcome on dose alone.

    Standard errors are the model-based ones of a prior-weighted GLM.
    Pass ``weights`` to skip the weighting model.
    """
    if len(dataset.exposed) == 0 or len(dataset.unexposed) == 0:
        raise DataError("IPW needs both exposed and unexposed units")
    w = ipw_weights(dataset, covariates, gps_model) if weights is None else np.asarray(weights, float)
    X = np.column_stack([np.ones(dataset.n), dataset.zc])
    fit = fit_glm(X, dataset.outcome, "poisson", ("intercept", "zc"), weights=w)
    return AttEstimate.from_coef(fit.coefficients[1], fit.standard_errors[1])


@dataclass
class SimulationReport:
    scenario: tuple
    method: str
    bias_percent: float
    rmse: float
    coverage_percent: float
    mean_match_rate: float | None = None
    n_replicates: int = 0
    n_failed: int = 0
    mean_se: float | None = None
    mean_coefficient: float | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["scenario"] = list(self.scenario)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        doc["scenario"] = tuple(doc["scenario"])
        return cls(**doc)


def simulation_metrics(estimates, true_coefficient=TRUE_COEFFICIENT, scenario=(), method="",
                       match_rates=None, n_failed=0) -> SimulationReport:
    """Percent bias of the mean, RMSE and CI coverage over replicates."""
    estimates = list(estimates)
    if len(estimates) < 2:
        raise DataError("need at least 2 replicate estimates")
    coef = np.array([e.coefficient for e in estimates])
    covered = np.array([e.ci_low <= true_coefficient <= e.ci_high for e in estimates])
    rates = None if match_rates is None or len(match_rates) == 0 else float(np.mean(match_rates))
    return SimulationReport(
        scenario=tuple(scenario),
        method=method,
        bias_percent=float(100.0 * (coef.mean() - true_coefficient) / true_coefficient),
        rmse=float(np.sqrt(np.mean((coef - true_coefficient) ** 2))),
        coverage_percent=float(100.0 * covered.mean()),
        mean_match_rate=rates,
        n_replicates=len(estimates),
        n_failed=n_failed,
        mean_se=float(np.mean([e.se for e in estimates])),
        mean_coefficient=float(coef.mean()),
    )
