import math

import numpy as np
import pytest

from cgpssm.datagen import Dataset
from cgpssm.gps import GpsRecord


@pytest.fixture
def five_units():
    """Five-unit layout: unit 3 sits within 0.1 of both exposed units 1 and 4."""
    coords = np.array([[0.0, 0.0], [-0.05, 0.0], [0.08, 0.0], [0.16, 0.0], [0.24, 0.0]])
    data = Dataset(
        ids=np.array([1, 2, 3, 4, 5]),
        coords=coords,
        covariates={"x1": np.zeros(5)},
        zb=np.array([1, 0, 0, 1, 0]),
        zc=np.array([100.0, 0, 0, 50.0, 0]),
        outcome=np.array([3.0, 1, 2, 4, 1]),
    )
    gps = {(1, 1): 0.45, (1, 2): 0.20, (1, 3): 0.41, (2, 4): 0.34, (2, 3): 0.33, (2, 5): 0.32}
    w = {1: 100.0, 2: 50.0}
    records = [
        GpsRecord(uid, sid, w[sid], math.nan, math.nan, g, exposed=uid in (1, 4))
        for (sid, uid), g in gps.items()
    ]
    return data, records


@pytest.fixture
def small_dataset():
    rng = np.random.default_rng(7)
    n = 60
    coords = rng.random((n, 2))
    x1, x2 = rng.standard_normal((2, n))
    zb = (rng.random(n) < 0.3).astype(int)
    zb[:3] = 1
    zb[3:6] = 0
    zc = np.where(zb == 1, 40 + 5 * x1 + rng.normal(0, 3, n), 0.0)
    y = rng.poisson(np.exp(0.5 + 0.02 * zc + 0.2 * x1)).astype(float)
    return Dataset(np.arange(1, n + 1), coords, {"x1": x1, "x2": x2}, zb, zc, y)
