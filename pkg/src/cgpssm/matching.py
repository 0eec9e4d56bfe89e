"""Double matching: spatial one-to-n, then one-to-one on GPS within strata."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ParameterError

__all__ = [
    "DistanceStratum",
    "MatchedPair",
    "MatchSpec",
    "MatchResult",
    "distance_match",
    "gps_match",
    "caliper_width",
    "write_pairs_csv",
    "read_pairs_csv",
]


@dataclass(frozen=True)
class DistanceStratum:
    stratum_id: int
    exposed_id: object
    candidate_ids: tuple
    w: float

    @property
    def empty(self) -> bool:
        return not self.candidate_ids


@dataclass(frozen=True, slots=True)
class MatchedPair:
    stratum_id: int
    exposed_id: object
    unexposed_id: object
    gps_gap: float
    w: float = float("nan")
    gps_exposed: float = float("nan")
    gps_unexposed: float = float("nan")


@dataclass(frozen=True)
class MatchSpec:
    """``cw`` is the caliper as a multiple of the SD of exposed-unit GPS."""

    d: float = 0.1
    method: str = "nearest"
    cw: float = math.inf
    replacement: bool = True
    order: str = "id"  # or "random"
    seed: int = 0
    caliper_reference: str = "exposed"  # or "all" records

    def __post_init__(self):
        if not self.d > 0:
            raise ParameterError("distance threshold d must be > 0")
        if self.method not in ("nearest", "caliper"):
            raise ParameterError(f"method must be 'nearest' or 'caliper', got {self.method!r}")
        if not self.cw > 0:
            raise ParameterError("caliper factor cw must be > 0 (or inf)")
        if self.order not in ("id", "random"):
            raise ParameterError("order must be 'id' or 'random'")
        if self.caliper_reference not in ("exposed", "all"):
            raise ParameterError("caliper_reference must be 'exposed' or 'all'")

    @property
    def label(self) -> str:
        cw = "inf" if math.isinf(self.cw) or self.method == "nearest" else f"{self.cw:g}"
        return f"cw={cw},{'with' if self.replacement else 'without'}_replacement"


@dataclass
class MatchResult:
    pairs: list
    unmatched_exposed: list
    caliper: float
    stratum_order: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self):
        return len(self.pairs)


def _sort_key(uid):
    return (0, uid, "") if isinstance(uid, (int, float, np.integer, np.floating)) else (1, 0, str(uid))


def distance_match(dataset, d: float) -> list:
    """One stratum per exposed unit holding every unexposed unit within ``d``.

    Strata are numbered 1, 2, ... in ascending exposed-id order; candidates
    are listed in ascending id order. The same unexposed unit may appear in
    any number of strata.
    """
    if not d > 0:
        raise ParameterError("distance threshold d must be > 0")
    ids = dataset.ids.tolist()
    exp_idx = sorted(dataset.exposed.tolist(), key=lambda i: _sort_key(ids[i]))
    unexp_idx = dataset.unexposed
    if len(unexp_idx) and exp_idx:
        tree = cKDTree(dataset.coords[unexp_idx])
        hits = tree.query_ball_point(dataset.coords[exp_idx], r=d * (1 + 1e-12))
    else:
        hits = [[] for _ in exp_idx]
    strata = []
    for sid, (e, hit) in enumerate(zip(exp_idx, hits), start=1):
        rows = unexp_idx[np.asarray(hit, dtype=int)]
        if len(rows):
            gap = dataset.coords[rows] - dataset.coords[e]
            rows = rows[np.hypot(gap[:, 0], gap[:, 1]) <= d]
        cand = sorted((ids[r] for r in rows), key=_sort_key)
        strata.append(DistanceStratum(sid, ids[e], tuple(cand), float(dataset.zc[e])))
    return strata


def caliper_width(records, spec: MatchSpec) -> float:
    if spec.method == "nearest" or math.isinf(spec.cw):
        return math.inf
    if spec.caliper_reference == "exposed":
        values = [r.gps for r in records if r.exposed]
    else:
        values = [r.gps for r in records]
    if len(values) < 2:
        return 0.0
    return spec.cw * float(np.std(values, ddof=1))


def gps_match(strata, records, spec: MatchSpec) -> MatchResult:
    """One-to-one GPS matching inside each distance stratum.

    Without replacement, strata are processed in ascending exposed-id
    order (or a seeded random order) and a matched unexposed unit is
    removed from every later stratum. Ties in the GPS gap go to the lower
    unit id.
    """
    by_stratum = defaultdict(dict)
    exposed_gps = {}
    for r in records:
        if r.exposed:
            exposed_gps[r.stratum_id] = r.gps
        else:
            by_stratum[r.stratum_id][r.unit_id] = r.gps
    width = caliper_width(records, spec)

    ordered = sorted(strata, key=lambda s: _sort_key(s.exposed_id))
    if not spec.replacement and spec.order == "random":
        perm = np.random.default_rng(spec.seed).permutation(len(ordered))
        ordered = [ordered[i] for i in perm]

    consumed = set()
    pairs, unmatched = [], []
    for s in ordered:
        if s.stratum_id not in exposed_gps:
            raise ParameterError(f"no GPS record for the exposed unit of stratum {s.stratum_id}")
        g_e = exposed_gps[s.stratum_id]
        cand_gps = by_stratum.get(s.stratum_id, {})
        best = None
        for c in s.candidate_ids:
            if not spec.replacement and c in consumed:
                continue
            if c not in cand_gps:
                raise ParameterError(f"no GPS record for unit {c!r} in stratum {s.stratum_id}")
            gap = abs(g_e - cand_gps[c])
            if gap > width:
                continue
            key = (gap, _sort_key(c))
            if best is None or key < best[0]:
                best = (key, c, gap)
        if best is None:
            unmatched.append(s.exposed_id)
            continue
        _, c, gap = best
        if not spec.replacement:
            consumed.add(c)
        pairs.append(MatchedPair(s.stratum_id, s.exposed_id, c, gap, s.w, g_e, cand_gps[c]))
    pairs.sort(key=lambda p: p.stratum_id)
    return MatchResult(pairs, unmatched, width, [s.stratum_id for s in ordered])


PAIR_COLUMNS = ["stratum_id", "exposed_id", "unexposed_id", "w", "gps_exposed", "gps_unexposed", "gps_gap"]


def write_pairs_csv(pairs, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PAIR_COLUMNS)
        for p in pairs:
            writer.writerow([p.stratum_id, p.exposed_id, p.unexposed_id, repr(p.w),
                             repr(p.gps_exposed), repr(p.gps_unexposed), repr(p.gps_gap)])


def read_pairs_csv(path, id_type=int) -> list:
    with open(path, newline="") as fh:
        return [
            MatchedPair(int(r["stratum_id"]), id_type(r["exposed_id"]), id_type(r["unexposed_id"]),
                        float(r["gps_gap"]), float(r["w"]), float(r["gps_exposed"]),
                        float(r["gps_unexposed"]))
            for r in csv.DictReader(fh)
        ]
