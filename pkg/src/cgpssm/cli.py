"""Command-line front end.

Subcommands: ``simulate``, ``analyze``, ``exposure``, ``variogram`` and
``balance``. Options may come from a JSON file (``--config``); explicit
flags override it and ``CGPS_SEED`` overrides the seed stored in the file.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import os
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .datagen import BENCHMARK_SCENARIOS, GeneratorCoefficients
from .diagnostics import balance_report, match_rate
from .errors import DataError, NumericalError, ParameterError
from .estimation import bootstrap_att
from .exposure import assignments_frame, compute_exposure, read_facilities
from .gps import build_gps_records, estimate_ps, fit_cgps_model, fit_ps_model, write_gps_csv
from .matching import MatchSpec, distance_match, gps_match, read_pairs_csv, write_pairs_csv
from .models.glm import fit_glm
from .simulation import SimulationConfig, reports_frame, run_simulation, summarize
from .spatial import default_bin_edges, empirical_semivariogram, fit_matern_variogram, write_variogram_csv

log = logging.getLogger("cgpssm")

PS_MODELS = {"spatial_glm": "spatial_glm", "boosted": "boosted", "true": "glm"}
CGPS_MODELS = {"spatial_glm": "spatial_glm", "true": "glm"}

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _float(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "infinity"):
        return math.inf
    return float(v)


@dataclass
class RunConfig:
    """Options shared by all subcommands; unused fields are ignored."""

    # simulate
    scenarios: list = field(default_factory=lambda: [list(s) for s in BENCHMARK_SCENARIOS])
    n_replicates: int = 50
    grid_side: int = 22
    cws: list = field(default_factory=lambda: [math.inf, 0.8, 0.6, 0.4, 0.2])
    replacement: list = field(default_factory=lambda: [True])
    methods: list = field(default_factory=lambda: ["true", "gam"])
    comparators: list = field(default_factory=lambda: ["unadjusted", "ipw_gam"])
    # shared
    seed: int = 20240101
    d: float = 0.1
    n_bootstrap: int = 200
    jobs: int = 1
    out: str = "."
    # analyze
    units: str | None = None
    facilities: str | None = None
    buffer: float | None = None
    distance_scale: float = 1.0
    covariates: list = field(default_factory=list)
    ps_model: str = "spatial_glm"
    cgps_model: str = "spatial_glm"
    method: str = "caliper"
    cw: float = 0.4
    with_replacement: bool = True
    log_dose: bool = False
    per_sd: bool = False
    pairs: str | None = None
    # variogram
    field_name: str = "outcome"
    residual: bool = False
    n_bins: int = 15

    def __post_init__(self):
        if self.ps_model not in PS_MODELS:
            raise ParameterError(f"ps_model must be one of {sorted(PS_MODELS)}, got {self.ps_model!r}")
        if self.cgps_model not in CGPS_MODELS:
            raise ParameterError(f"cgps_model must be one of {sorted(CGPS_MODELS)}, got {self.cgps_model!r}")
        if self.method not in ("nearest", "caliper"):
            raise ParameterError(f"method must be 'nearest' or 'caliper', got {self.method!r}")
        if self.jobs < 1:
            raise ParameterError("jobs must be >= 1")
        self.cw = _float(self.cw)
        self.cws = [_float(c) for c in self.cws]

    @classmethod
    def from_sources(cls, file_doc: dict | None, overrides: dict) -> "RunConfig":
        doc = dict(file_doc or {})
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ParameterError(f"unknown config key(s): {', '.join(unknown)}")
        env_seed = os.environ.get("CGPS_SEED")
        if env_seed is not None:
            try:
                doc["seed"] = int(env_seed)
            except ValueError:
                raise ParameterError(f"CGPS_SEED must be an integer, got {env_seed!r}") from None
        doc.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ParameterError(str(exc)) from None

    def simulation(self) -> SimulationConfig:
        return SimulationConfig(
            scenarios=tuple(tuple(float(v) for v in s) for s in self.scenarios),
            n_replicates=self.n_replicates,
            seed=self.seed,
            grid_side=self.grid_side,
            d=self.d,
            cws=tuple(self.cws),
            replacement=tuple(bool(r) for r in self.replacement),
            methods=tuple(self.methods),
            comparators=tuple(self.comparators),
            n_bootstrap=self.n_bootstrap,
            coefficients=GeneratorCoefficients(),
        )

    def match_spec(self) -> MatchSpec:
        cw = math.inf if self.method == "nearest" else self.cw
        return MatchSpec(d=self.d, method=self.method, cw=cw, replacement=self.with_replacement)


def _outdir(cfg) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _slug(text) -> str:
    return re.sub(r"[^A-Za-z0-9.=_-]+", "_", text).strip("_")


def cmd_simulate(cfg: RunConfig) -> list:
    out = _outdir(cfg)
    frame = run_simulation(cfg.simulation(), jobs=cfg.jobs)
    frame.to_csv(out / "replicates.csv", index=False, float_format="%.17g")
    reports = summarize(frame)
    cells = out / "cells"
    cells.mkdir(exist_ok=True)
    for r in reports:
        name = _slug(f"k={r.scenario[0]:g}_pi={r.scenario[1]:g}_{r.method}")
        io.write_json(r.to_dict(), cells / f"{name}.json")
    reports_frame(reports).to_csv(out / "summary.csv", index=False, float_format="%.17g")
    return reports


def _load_units(cfg: RunConfig, require=("outcome",)):
    if not cfg.units:
        raise ParameterError("a units CSV is required (--units)")
    exposure = None
    if cfg.facilities:
        if cfg.buffer is None:
            raise ParameterError("--buffer is required with --facilities")
        raw = io.read_units_csv(cfg.units, cfg.covariates, require=require, need_exposure=False)
        assigned = compute_exposure(raw.ids.tolist(), raw.coords, read_facilities(cfg.facilities),
                                    cfg.buffer, cfg.distance_scale)
        exposure = {a.unit_id: (a.zb, a.zc) for a in assigned}
    return io.read_units_csv(cfg.units, cfg.covariates, require=require, exposure=exposure)


def cmd_analyze(cfg: RunConfig) -> dict:
    """Distance match, GPS match, balance check and bootstrap estimate."""
    data = _load_units(cfg)
    covs = list(cfg.covariates)
    out = _outdir(cfg)
    strata = distance_match(data, cfg.d)
    ps_kind = PS_MODELS[cfg.ps_model]
    ps_model = fit_ps_model(data, covs, ps_kind, seed=cfg.seed)
    ps = estimate_ps(ps_model, data.matrix(covs), None if ps_kind == "glm" else data.coords)
    dose = fit_cgps_model(data, covs, CGPS_MODELS[cfg.cgps_model], log_dose=cfg.log_dose)
    records = build_gps_records(strata, ps, dose, data, covs)
    result = gps_match(strata, records, cfg.match_spec())
    if not result.pairs:
        raise DataError("no exposed unit could be matched; widen d or cw")
    report = balance_report(data, result.pairs, covs)
    rate = match_rate(result.pairs, data)
    est = bootstrap_att(result.pairs, data, cfg.n_bootstrap, seed=cfg.seed)
    if cfg.per_sd:
        est = est.rescaled(float(np.std(data.zc[data.exposed], ddof=1)), "per_sd")
    write_pairs_csv(result.pairs, out / "pairs.csv")
    write_gps_csv(records, out / "gps.csv")
    report.write_csv(out / "balance.csv")
    report.write_json(out / "balance.json")
    summary = {"estimate": est.to_dict(), "match_rate": rate.to_dict(),
               "caliper": result.caliper, "match_spec": cfg.match_spec().label,
               "ps_model": cfg.ps_model, "cgps_model": cfg.cgps_model,
               "covariates": covs, "log_dose": cfg.log_dose}
    io.write_json(summary, out / "estimate.json")
    return {"estimate": est, "balance": report, "match_rate": rate, "pairs": result.pairs}


def cmd_exposure(cfg: RunConfig):
    if not (cfg.units and cfg.facilities and cfg.buffer is not None):
        raise ParameterError("exposure needs --units, --facilities and --buffer")
    units = io.read_units_csv(cfg.units, (), require=(), need_exposure=False)
    assigned = compute_exposure(units.ids.tolist(), units.coords, read_facilities(cfg.facilities),
                                cfg.buffer, cfg.distance_scale)
    out = _outdir(cfg)
    assignments_frame(assigned).to_csv(out / "exposure.csv", index=False, float_format="%.17g")
    return assigned


def cmd_variogram(cfg: RunConfig) -> dict:
    """Variogram of a field and, with ``residual``, of its covariate-regression residuals."""
    if not cfg.units:
        raise ParameterError("a units CSV is required (--units)")
    data = io.read_units_csv(cfg.units, cfg.covariates, require=(), need_exposure=False)
    values = io.read_column(cfg.units, cfg.field_name)
    out = _outdir(cfg)
    results = {}
    series = {"raw": values}
    if cfg.residual:
        if not cfg.covariates:
            raise ParameterError("--residual needs --covariates")
        X = np.column_stack([np.ones(data.n), data.matrix(cfg.covariates)])
        fit = fit_glm(X, values, "linear", ("intercept", *cfg.covariates))
        series["residual"] = values - X @ fit.coefficients
    for name, v in series.items():
        vg = empirical_semivariogram(v, data.coords, default_bin_edges(data.coords, cfg.n_bins))
        fitted = fit_matern_variogram(vg)
        prefix = "variogram" if name == "raw" else "residual_variogram"
        write_variogram_csv(vg, out / f"{prefix}.csv")
        io.write_json(fitted.to_dict(), out / f"{prefix}_fit.json")
        results[name] = fitted
    return results


def cmd_balance(cfg: RunConfig):
    data = _load_units(cfg, require=())
    pairs = read_pairs_csv(cfg.pairs, id_type=type(data.ids.tolist()[0])) if cfg.pairs else None
    report = balance_report(data, pairs, list(cfg.covariates))
    out = _outdir(cfg)
    report.write_csv(out / "balance.csv")
    report.write_json(out / "balance.json")
    return report


COMMANDS = {
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "exposure": cmd_exposure,
    "variogram": cmd_variogram,
    "balance": cmd_balance,
}


def _csv_list(text, conv=str):
    return [conv(t) for t in text.split(",") if t.strip()]


def _scenarios(text):
    out = []
    for part in text.split(";"):
        part = part.strip()
        if part:
            k, pi = part.split(",")
            out.append([float(k), float(pi)])
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cgpssm", description="CGPS spatial matching toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file with RunConfig keys")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)

    s = sub.add_parser("simulate", help="Monte Carlo benchmark")
    common(s)
    s.add_argument("--scenarios", type=_scenarios, help='e.g. "0.5,0.5;1,1"')
    s.add_argument("--replicates", dest="n_replicates", type=int)
    s.add_argument("--bootstrap", dest="n_bootstrap", type=int)
    s.add_argument("--grid-side", type=int)
    s.add_argument("--cws", type=lambda t: _csv_list(t, _float))
    s.add_argument("--methods", type=_csv_list)
    s.add_argument("--comparators", type=_csv_list)
    s.add_argument("--replacement", choices=["with", "without", "both"])
    s.add_argument("--d", type=float)
    s.add_argument("--jobs", type=int)

    def units_opts(sp):
        sp.add_argument("--units")
        sp.add_argument("--covariates", type=_csv_list)
        sp.add_argument("--facilities")
        sp.add_argument("--buffer", type=float)
        sp.add_argument("--distance-scale", type=float)

    a = sub.add_parser("analyze", help="match and estimate on a units CSV")
    common(a)
    units_opts(a)
    a.add_argument("--ps-model", choices=sorted(PS_MODELS))
    a.add_argument("--cgps-model", choices=sorted(CGPS_MODELS))
    a.add_argument("--method", choices=["nearest", "caliper"])
    a.add_argument("--cw", type=_float)
    a.add_argument("--d", type=float)
    a.add_argument("--without-replacement", dest="with_replacement", action="store_const", const=False)
    a.add_argument("--bootstrap", dest="n_bootstrap", type=int)
    a.add_argument("--log-dose", action="store_const", const=True)
    a.add_argument("--per-sd", action="store_const", const=True)

    e = sub.add_parser("exposure", help="binary and continuous exposure from facilities")
    common(e)
    units_opts(e)

    v = sub.add_parser("variogram", help="empirical variogram and Matérn fit")
    common(v)
    units_opts(v)
    v.add_argument("--field", dest="field_name")
    v.add_argument("--residual", action="store_const", const=True)
    v.add_argument("--bins", dest="n_bins", type=int)

    b = sub.add_parser("balance", help="balance report for a units CSV and optional pairs CSV")
    common(b)
    units_opts(b)
    b.add_argument("--pairs")
    return p


def _overrides(ns) -> dict:
    skip = {"command", "config", "verbose"}
    doc = {k: v for k, v in vars(ns).items() if k not in skip}
    rep = doc.pop("replacement", None)
    if rep is not None:
        doc["replacement"] = {"with": [True], "without": [False], "both": [True, False]}[rep]
    return doc


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_doc = io.read_json(ns.config) if ns.config else None
        cfg = RunConfig.from_sources(file_doc, _overrides(ns))
        COMMANDS[ns.command](cfg)
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:  # malformed JSON and similar
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
