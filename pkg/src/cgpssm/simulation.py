"""Monte Carlo harness: generate, fit, match, estimate and summarize.

A replicate fits each propensity/dose model pair once and then reuses the
resulting GPS records for every matching specification, so adding caliper
values costs only matching plus bootstrap time.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .datagen import GeneratorCoefficients, ScenarioConfig, generate_dataset
from .diagnostics import balance_report, match_rate
from .errors import CgpsError, DataError, ParameterError
from .estimation import (
    TRUE_COEFFICIENT,
    bootstrap_att,
    naive_ipw_att,
    simulation_metrics,
    unadjusted_poisson,
)
from .gps import build_gps_records, estimate_ps, fit_cgps_model, fit_ps_model
from .matching import MatchSpec, distance_match, gps_match
from .spatial import MaternParams

log = logging.getLogger(__name__)

OBSERVED = ("x1", "x2", "x3")
BALANCE_COVARIATES = ("x1", "x2", "x3", "u")

# method -> (ps model kind, cgps model kind, covariates)
METHODS = {
    "true": ("glm", "glm", OBSERVED + ("u",)),
    "gam": ("spatial_glm", "spatial_glm", OBSERVED),
    "boosted": ("boosted", "spatial_glm", OBSERVED),
}
COMPARATORS = ("unadjusted", "ipw_gam", "ipw_linear")

MAX_FAILED_REPLICATES = 0.10


@dataclass(frozen=True)
class SimulationConfig:
    scenarios: tuple = ((1.0, 1.0),)
    n_replicates: int = 50
    seed: int = 20240101
    grid_side: int = 22
    d: float = 0.1
    cws: tuple = (math.inf, 0.8, 0.6, 0.4, 0.2)
    replacement: tuple = (True,)
    methods: tuple = ("true", "gam")
    comparators: tuple = ("unadjusted", "ipw_gam")
    n_bootstrap: int = 200
    coefficients: GeneratorCoefficients = field(default_factory=GeneratorCoefficients)
    boosted_grid: dict | None = None
    boosted_folds: int = 10

    def __post_init__(self):
        for m in self.methods:
            if m not in METHODS:
                raise ParameterError(f"unknown method {m!r}; choose from {sorted(METHODS)}")
        for c in self.comparators:
            if c not in COMPARATORS:
                raise ParameterError(f"unknown comparator {c!r}; choose from {COMPARATORS}")
        if self.n_replicates < 1 or self.n_bootstrap < 1:
            raise ParameterError("n_replicates and n_bootstrap must be >= 1")

    def match_specs(self):
        specs = []
        for repl in self.replacement:
            for cw in self.cws:
                if math.isinf(cw):
                    specs.append(MatchSpec(d=self.d, method="nearest", replacement=repl))
                else:
                    specs.append(MatchSpec(d=self.d, method="caliper", cw=cw, replacement=repl))
        return specs

    def scenario_config(self, k, pi) -> ScenarioConfig:
        return ScenarioConfig(
            matern=MaternParams(k, pi),
            grid_side=self.grid_side,
            n_replicates=self.n_replicates,
            seed=self.seed,
            coefficients=self.coefficients,
        )


def substream_seed(*parts) -> int:
    return int(np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts]).generate_state(1)[0])


def _record(scenario, rep, method, spec_label, est, extra=None):
    row = {
        "k": scenario[0],
        "pi": scenario[1],
        "replicate": rep,
        "method": method,
        "spec": spec_label,
        "coefficient": est.coefficient if est else math.nan,
        "se": est.se if est else math.nan,
        "ci_low": est.ci_low if est else math.nan,
        "ci_high": est.ci_high if est else math.nan,
        "bootstrap_sd": (est.bootstrap_sd if est and est.bootstrap_sd is not None else math.nan),
        "failed": est is None,
    }
    if extra:
        row.update(extra)
    return row


def run_replicate(config: SimulationConfig, scenario, rep: int) -> list:
    """All methods and matching specs for one simulated dataset."""
    k, pi = scenario
    data = generate_dataset(config.scenario_config(k, pi), rep)
    rows = []
    for comp in config.comparators:
        try:
            if comp == "unadjusted":
                est = unadjusted_poisson(data, OBSERVED)
            else:
                est = naive_ipw_att(data, OBSERVED, gps_model="spatial_glm" if comp == "ipw_gam" else "glm")
        except CgpsError as exc:
            log.warning("%s failed on %s rep %d: %s", comp, scenario, rep, exc)
            est = None
        rows.append(_record(scenario, rep, comp, "", est))

    strata = distance_match(data, config.d)
    specs = config.match_specs()
    for mi, method in enumerate(config.methods):
        ps_kind, cgps_kind, covs = METHODS[method]
        try:
            ps_model = fit_ps_model(data, list(covs), ps_kind,
                                    seed=substream_seed(config.seed, rep, mi),
                                    hyper_grid=config.boosted_grid, n_folds=config.boosted_folds)
            coords = data.coords if ps_kind != "glm" else None
            ps = estimate_ps(ps_model, data.matrix(list(covs)), coords)
            dose = fit_cgps_model(data, list(covs), cgps_kind)
            records = build_gps_records(strata, ps, dose, data, list(covs))
        except CgpsError as exc:
            log.warning("%s model fit failed on %s rep %d: %s", method, scenario, rep, exc)
            for spec in specs:
                rows.append(_record(scenario, rep, method, spec.label, None))
            continue
        for si, spec in enumerate(specs):
            result = gps_match(strata, records, spec)
            rate = match_rate(result.pairs, data)
            extra = {"match_rate": rate.matched_fraction}
            est = None
            if result.pairs:
                bal = balance_report(data, result.pairs, BALANCE_COVARIATES)
                extra.update({f"smd_{c}": bal.smd_after[c] for c in BALANCE_COVARIATES})
                extra.update({f"smd_before_{c}": bal.smd_before[c] for c in BALANCE_COVARIATES})
                try:
                    est = bootstrap_att(result.pairs, data, config.n_bootstrap,
                                        seed=substream_seed(config.seed, rep, mi, si))
                except CgpsError as exc:
                    log.warning("bootstrap failed (%s, %s) on %s rep %d: %s",
                                method, spec.label, scenario, rep, exc)
            rows.append(_record(scenario, rep, method, spec.label, est, extra))
    return rows


def _run_cell(args):
    config, scenario, rep = args
    return run_replicate(config, scenario, rep)


def run_simulation(config: SimulationConfig, jobs: int = 1, progress=None) -> pd.DataFrame:
    """Per-replicate estimates for every scenario, method and spec."""
    tasks = [(config, tuple(s), r) for s in config.scenarios for r in range(config.n_replicates)]
    rows = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for out in pool.map(_run_cell, tasks):
                rows.extend(out)
                if progress:
                    progress()
    else:
        for t in tasks:
            rows.extend(_run_cell(t))
            if progress:
                progress()
    return pd.DataFrame(rows)


def summarize(frame: pd.DataFrame, true_coefficient=TRUE_COEFFICIENT) -> list:
    """One SimulationReport per (scenario, method, spec) cell.

    A cell fails (raises DataError) when more than 10% of its replicates
    produced no estimate.
    """
    from .estimation import AttEstimate

    reports = []
    for (k, pi, method, spec), g in frame.groupby(["k", "pi", "method", "spec"], sort=True):
        ok = g[~g["failed"]]
        n_failed = int(g["failed"].sum())
        if n_failed > MAX_FAILED_REPLICATES * len(g):
            raise DataError(f"cell k={k}, pi={pi}, {method} {spec}: {n_failed}/{len(g)} replicates failed")
        ests = [AttEstimate(r.coefficient, r.se, r.ci_low, r.ci_high) for r in ok.itertuples()]
        rates = g["match_rate"].dropna().tolist() if "match_rate" in g else None
        label = method if not spec else f"{method}[{spec}]"
        rep = simulation_metrics(ests, true_coefficient, (float(k), float(pi)), label, rates, n_failed)
        for c in BALANCE_COVARIATES:
            col = f"smd_{c}"
            if col in g and g[col].notna().any():
                rep.extra[f"mean_abs_smd_{c}"] = float(g[col].abs().mean())
        reports.append(rep)
    return reports


def reports_frame(reports) -> pd.DataFrame:
    rows = []
    for r in reports:
        row = {"k": r.scenario[0], "pi": r.scenario[1], "method": r.method,
               "bias_percent": r.bias_percent, "rmse": r.rmse,
               "coverage_percent": r.coverage_percent, "mean_match_rate": r.mean_match_rate,
               "n_replicates": r.n_replicates, "n_failed": r.n_failed,
               "mean_coefficient": r.mean_coefficient, "mean_se": r.mean_se}
        row.update(r.extra)
        rows.append(row)
    return pd.DataFrame(rows)
