"""Covariate balance and match-rate diagnostics."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError

BALANCE_THRESHOLDS = (0.1, 0.25)


def _weighted_mean_var(x, m):
    x = np.asarray(x, float)
    m = np.asarray(m, float)
    total = m.sum()
    mean = float(np.sum(m * x) / total)
    var = float(np.sum(m * (x - mean) ** 2) / (total - 1)) if total > 1 else 0.0
    return mean, var


def smd(values, exposed_idx, unexposed_idx, exposed_mult=None, unexposed_mult=None,
        reference_var=None) -> float:
    """Standardized mean difference, exposed minus unexposed.

    Group means and (ddof=1) variances are weighted by multiplicity, i.e.
    how many times each unit appears in the matched sample. The pooled SD
    is ``sqrt((var_e + var_u) / 2)`` unless ``reference_var`` (a pooled
    variance computed elsewhere, e.g. before matching) is given. Zero
    pooled variance yields 0 for equal means and a signed infinity
    otherwise.
    """
    values = np.asarray(values, float)
    exposed_idx = np.asarray(exposed_idx, int)
    unexposed_idx = np.asarray(unexposed_idx, int)
    if len(exposed_idx) == 0 or len(unexposed_idx) == 0:
        raise DataError("both groups must be non-empty")
    me = np.ones(len(exposed_idx)) if exposed_mult is None else exposed_mult
    mu = np.ones(len(unexposed_idx)) if unexposed_mult is None else unexposed_mult
    mean_e, var_e = _weighted_mean_var(values[exposed_idx], me)
    mean_u, var_u = _weighted_mean_var(values[unexposed_idx], mu)
    pooled = (var_e + var_u) / 2.0 if reference_var is None else reference_var
    diff = mean_e - mean_u
    if pooled <= 0:
        if abs(diff) <= 1e-15 * max(1.0, abs(mean_e), abs(mean_u)):
            return 0.0
        return math.copysign(math.inf, diff)
    return diff / math.sqrt(pooled)


@dataclass
class MatchRate:
    matched_exposed: int
    total_exposed: int

    @property
    def dropped_percent(self) -> float:
        if self.total_exposed == 0:
            return 0.0
        return 100.0 * (1.0 - self.matched_exposed / self.total_exposed)

    @property
    def matched_fraction(self) -> float:
        return self.matched_exposed / self.total_exposed if self.total_exposed else 0.0

    def __str__(self):
        return f"{self.matched_exposed}/{self.total_exposed} ({self.dropped_percent:.1f}%)"

    def to_dict(self):
        return {
            "matched_exposed": self.matched_exposed,
            "total_exposed": self.total_exposed,
            "dropped_percent": self.dropped_percent,
        }


def match_rate(pairs, dataset) -> MatchRate:
    matched = len({p.exposed_id for p in pairs})
    return MatchRate(matched, int(np.sum(dataset.zb == 1)))


@dataclass
class BalanceReport:
    covariates: list
    smd_before: dict
    smd_after: dict | None = None
    thresholds: tuple = BALANCE_THRESHOLDS
    match: MatchRate | None = None

    @property
    def mean_abs_smd_before(self) -> float:
        return float(np.mean([abs(self.smd_before[c]) for c in self.covariates]))

    @property
    def mean_abs_smd_after(self) -> float | None:
        if self.smd_after is None:
            return None
        return float(np.mean([abs(self.smd_after[c]) for c in self.covariates]))

    def flags(self, which="after") -> dict:
        """Per covariate: whether |SMD| is below each threshold."""
        src = self.smd_after if which == "after" else self.smd_before
        if src is None:
            return {}
        return {c: {str(t): bool(abs(src[c]) < t) for t in self.thresholds} for c in self.covariates}

    def to_dict(self) -> dict:
        return {
            "covariates": list(self.covariates),
            "smd_before": self.smd_before,
            "smd_after": self.smd_after,
            "mean_abs_smd_before": self.mean_abs_smd_before,
            "mean_abs_smd_after": self.mean_abs_smd_after,
            "flags_after": self.flags("after"),
            "match_rate": None if self.match is None else self.match.to_dict(),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["covariate", "smd_before", "smd_after"])
            for c in self.covariates:
                after = "" if self.smd_after is None else repr(float(self.smd_after[c]))
                writer.writerow([c, repr(float(self.smd_before[c])), after])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def read_csv(cls, path) -> "BalanceReport":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        before = {r["covariate"]: float(r["smd_before"]) for r in rows}
        after_vals = {r["covariate"]: r["smd_after"] for r in rows}
        after = None if all(v == "" for v in after_vals.values()) else {
            k: float(v) for k, v in after_vals.items()
        }
        return cls([r["covariate"] for r in rows], before, after)


def matched_multiplicities(pairs, dataset):
    """Row indices and multiplicities of matched exposed and unexposed units."""
    index = dataset.index_of()
    exp_count = Counter(index[p.exposed_id] for p in pairs)
    unexp_count = Counter(index[p.unexposed_id] for p in pairs)
    e_idx = np.array(sorted(exp_count), dtype=int)
    u_idx = np.array(sorted(unexp_count), dtype=int)
    return (e_idx, np.array([exp_count[i] for i in e_idx], float),
            u_idx, np.array([unexp_count[i] for i in u_idx], float))


def balance_report(dataset, pairs=None, covariates=("x1", "x2", "x3"), pooled="matched") -> BalanceReport:
    """SMDs before matching and, if ``pairs`` is given, after matching.

    ``pooled="matched"`` standardizes after-matching SMDs with the matched
    sample's own pooled SD; ``pooled="before"`` reuses the pre-matching
    pooled SD.
    """
    if pooled not in ("matched", "before"):
        raise ParameterError(f"pooled must be 'matched' or 'before', got {pooled!r}")
    covariates = list(covariates)
    e_all, u_all = dataset.exposed, dataset.unexposed
    before = {}
    pre_var = {}
    for c in covariates:
        v = dataset.column(c)
        before[c] = smd(v, e_all, u_all)
        pre_var[c] = (np.var(v[e_all], ddof=1) + np.var(v[u_all], ddof=1)) / 2.0
    if pairs is None:
        return BalanceReport(covariates, before)
    pairs = list(pairs)
    if not pairs:
        raise DataError("matched set is empty; no after-matching balance")
    e_idx, e_m, u_idx, u_m = matched_multiplicities(pairs, dataset)
    after = {}
    for c in covariates:
        ref = pre_var[c] if pooled == "before" else None
        after[c] = smd(dataset.column(c), e_idx, u_idx, e_m, u_m, reference_var=ref)
    return BalanceReport(covariates, before, after, match=match_rate(pairs, dataset))
