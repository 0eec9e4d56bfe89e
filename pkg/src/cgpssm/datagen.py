"""Simulated spatial-confounding scenarios.

A Gaussian-process confounder ``u`` on a regular grid in [0, 1]^2, three
i.i.d. standard-normal covariates, a logistic binary exposure, a linear
continuous dose for the exposed and a Poisson outcome.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache

import numpy as np
import pandas as pd

from .errors import DataError, NumericalError, ParameterError
from .spatial import MaternParams, matern_correlation, pairwise_distances

__all__ = [
    "GeneratorCoefficients",
    "ScenarioConfig",
    "Dataset",
    "grid_coordinates",
    "replicate_rng",
    "matern_cholesky",
    "sample_gp_field",
    "generate_dataset",
    "BENCHMARK_SCENARIOS",
]

# (smoothness, range) pairs of the nine benchmark scenarios
BENCHMARK_SCENARIOS = tuple((k, pi) for k in (0.1, 0.5, 1.0) for pi in (0.1, 0.5, 1.0))

# Smallest dose assigned to an exposed unit; the linear dose model can in
# principle go negative (about 5 SD below its mean).
MIN_DOSE = 1e-8


@dataclass(frozen=True)
class GeneratorCoefficients:
    zb_intercept: float = -3.0
    zb_betas: tuple = (1.0, 1.4, 0.8, 1.3)
    zc_intercept: float = 50.0
    zc_betas: tuple = (2.0, 4.0, 3.5, 6.0)
    zc_noise_sd: float = 5.0
    y_intercept: float = 0.0
    y_exposure_beta: float = 0.03
    y_betas: tuple = (0.15, 0.23, 0.31, 1.0)

    def __post_init__(self):
        if not self.zc_noise_sd > 0:
            raise ParameterError("zc_noise_sd must be positive")
        for name in ("zb_betas", "zc_betas", "y_betas"):
            if len(getattr(self, name)) != 4:
                raise ParameterError(f"{name} needs 4 entries (x1, x2, x3, u)")
            object.__setattr__(self, name, tuple(float(b) for b in getattr(self, name)))


@dataclass(frozen=True)
class ScenarioConfig:
    matern: MaternParams = field(default_factory=lambda: MaternParams(1.0, 1.0))
    grid_side: int = 22
    n_replicates: int = 200
    seed: int = 20240101
    coefficients: GeneratorCoefficients = field(default_factory=GeneratorCoefficients)

    def __post_init__(self):
        if self.grid_side < 2:
            raise ParameterError("grid_side must be >= 2")
        if self.n_replicates < 1:
            raise ParameterError("n_replicates must be >= 1")

    @property
    def label(self) -> str:
        return f"k={self.matern.smoothness:g},pi={self.matern.range:g}"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        doc = dict(doc)
        if "matern" in doc:
            doc["matern"] = MaternParams(**doc["matern"])
        if "coefficients" in doc:
            coeffs = {k: tuple(v) if isinstance(v, list) else v for k, v in doc["coefficients"].items()}
            doc["coefficients"] = GeneratorCoefficients(**coeffs)
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Dataset:
    """Column-oriented unit table.

    ``covariates`` maps covariate names to arrays in a fixed order. ``u``
    holds the spatial confounder when it is known (simulation) and is
    ``None`` otherwise; it is never part of ``covariates`` so that "U
    unmeasured" analyses cannot pick it up by accident.
    """

    ids: np.ndarray
    coords: np.ndarray
    covariates: dict
    zb: np.ndarray
    zc: np.ndarray
    outcome: np.ndarray
    u: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.ids)
        arrays = [self.coords, self.zb, self.zc, self.outcome, *self.covariates.values()]
        if self.u is not None:
            arrays.append(self.u)
        if any(len(a) != n for a in arrays):
            raise DataError("all dataset columns must have the same length")
        if len(set(self.ids.tolist())) != n:
            raise DataError("unit ids must be unique")
        if not np.all(np.isfinite(self.coords)):
            raise DataError("coordinates must be finite")
        zb = np.asarray(self.zb)
        if not np.all((zb == 0) | (zb == 1)):
            raise DataError("zb must be 0/1")
        bad = ((zb == 1) & ~(self.zc > 0)) | ((zb == 0) & (self.zc != 0))
        if np.any(bad):
            first = self.ids[np.flatnonzero(bad)[0]]
            raise DataError(f"zc must be > 0 iff zb == 1 (violated at id {first!r})")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def exposed(self) -> np.ndarray:
        return np.flatnonzero(self.zb == 1)

    @property
    def unexposed(self) -> np.ndarray:
        return np.flatnonzero(self.zb == 0)

    def column(self, name: str) -> np.ndarray:
        if name == "u":
            if self.u is None:
                raise DataError("the spatial confounder u is not available")
            return self.u
        if name in self.covariates:
            return self.covariates[name]
        if name in ("x", "y"):
            return self.coords[:, 0 if name == "x" else 1]
        if name in ("zb", "zc", "outcome"):
            return getattr(self, name)
        raise DataError(f"unknown column {name!r}")

    def matrix(self, names) -> np.ndarray:
        if not names:
            return np.empty((self.n, 0))
        return np.column_stack([self.column(c) for c in names]).astype(float)

    def index_of(self) -> dict:
        return {uid: i for i, uid in enumerate(self.ids.tolist())}

    def to_frame(self) -> pd.DataFrame:
        cols = {"id": self.ids, "x": self.coords[:, 0], "y": self.coords[:, 1]}
        cols.update(self.covariates)
        if self.u is not None:
            cols["u"] = self.u
        cols.update(zb=self.zb.astype(int), zc=self.zc, outcome=self.outcome)
        return pd.DataFrame(cols)

    @classmethod
    def from_frame(cls, df: pd.DataFrame, covariates=None) -> "Dataset":
        reserved = {"id", "x", "y", "u", "zb", "zc", "outcome"}
        if covariates is None:
            covariates = [c for c in df.columns if c not in reserved]
        return cls(
            ids=df["id"].to_numpy(),
            coords=df[["x", "y"]].to_numpy(float),
            covariates={c: df[c].to_numpy(float) for c in covariates},
            zb=df["zb"].to_numpy(int),
            zc=df["zc"].to_numpy(float),
            outcome=df["outcome"].to_numpy(float),
            u=df["u"].to_numpy(float) if "u" in df.columns else None,
        )

    def with_outcome(self, outcome) -> "Dataset":
        return replace(self, outcome=np.asarray(outcome, dtype=float))


def grid_coordinates(grid_side: int) -> np.ndarray:
    """Regular ``grid_side x grid_side`` lattice on [0, 1]^2, row-major."""
    g = np.linspace(0.0, 1.0, grid_side)
    gx, gy = np.meshgrid(g, g)
    return np.column_stack([gx.ravel(), gy.ravel()])


def replicate_rng(seed: int, *stream) -> np.random.Generator:
    """Philox generator keyed by ``seed`` and a substream path."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))


@lru_cache(maxsize=32)
def matern_cholesky(grid_side: int, smoothness: float, range_: float) -> np.ndarray:
    """Lower Cholesky factor of the grid's Matérn correlation matrix.

    Diagonal jitter starts at 1e-10 and grows tenfold up to 1e-6 when the
    factorization fails.
    """
    coords = grid_coordinates(grid_side)
    cov = matern_correlation(pairwise_distances(coords), MaternParams(smoothness, range_))
    jitter = 1e-10
    while True:
        try:
            factor = np.linalg.cholesky(cov + jitter * np.eye(len(cov)))
            factor.setflags(write=False)
            return factor
        except np.linalg.LinAlgError:
            jitter *= 10
            if jitter > 1e-6 * (1 + 1e-9):
                raise NumericalError(
                    f"Matérn covariance (k={smoothness}, pi={range_}) not positive definite "
                    "after jitter 1e-6"
                ) from None


def sample_gp_field(grid_side: int, matern: MaternParams, seed=None, rng=None, normalize=True):
    """Draw one Gaussian-process realization on the grid.

    The field is rescaled to sample mean 0 and sample variance 1 (ddof=0)
    unless ``normalize`` is false.
    """
    if rng is None:
        rng = replicate_rng(0 if seed is None else seed)
    factor = matern_cholesky(grid_side, float(matern.smoothness), float(matern.range))
    field_ = factor @ rng.standard_normal(factor.shape[0])
    if normalize:
        field_ = field_ - field_.mean()
        sd = field_.std()
        if sd > 0:
            field_ = field_ / sd
    return field_


def _expit(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def generate_dataset(config: ScenarioConfig, replicate_index: int) -> Dataset:
    rng = replicate_rng(config.seed, replicate_index)
    coef = config.coefficients
    coords = grid_coordinates(config.grid_side)
    n = len(coords)

    u = sample_gp_field(config.grid_side, config.matern, rng=rng)
    x = rng.standard_normal((n, 3))
    xu = np.column_stack([x, u])

    p = _expit(coef.zb_intercept + xu @ np.asarray(coef.zb_betas))
    zb = (rng.random(n) < p).astype(int)
    noise = rng.normal(0.0, coef.zc_noise_sd, n)
    dose = coef.zc_intercept + xu @ np.asarray(coef.zc_betas) + noise
    zc = np.where(zb == 1, np.maximum(dose, MIN_DOSE), 0.0)
    eta = coef.y_intercept + coef.y_exposure_beta * zc + xu @ np.asarray(coef.y_betas)
    y = rng.poisson(np.exp(eta)).astype(float)

    return Dataset(
        ids=np.arange(1, n + 1),
        coords=coords,
        covariates={"x1": x[:, 0], "x2": x[:, 1], "x3": x[:, 2]},
        zb=zb,
        zc=zc,
        outcome=y,
        u=u,
    )
