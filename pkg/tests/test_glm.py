import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cgpssm.datagen import grid_coordinates
from cgpssm.errors import DataError, ParameterError, RankDeficiencyError, SeparationError
from cgpssm.models.glm import FittedModel, deviance, fit_glm, irls, score
from cgpssm.models.spatial_glm import RadialBasis, farthest_point_knots, fit_spatial_glm

from oracles import newton_glm


def _instance(family, n=30, p=3, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    beta = rng.normal(0, 0.5, p)
    eta = X @ beta
    if family == "poisson":
        y = rng.poisson(np.exp(eta)).astype(float)
    elif family == "logistic":
        y = (rng.random(n) < 1 / (1 + np.exp(-eta))).astype(float)
    else:
        y = eta + rng.normal(0, 1, n)
    return X, y


def test_linear_exact_interpolation_is_degenerate():
    rng = np.random.default_rng(1)
    X = np.column_stack([np.ones(20), rng.standard_normal((20, 2))])
    beta = np.array([1.0, -2.0, 0.5])
    m = fit_glm(X, X @ beta, "linear")
    assert np.allclose(m.coefficients, beta, atol=1e-12)
    assert m.residual_sd < 1e-10 and m.degenerate


def test_linear_sigma_hat():
    X, y = _instance("linear", n=50)
    m = fit_glm(X, y, "linear")
    rss = np.sum((y - X @ m.coefficients) ** 2)
    assert m.residual_sd == pytest.approx(np.sqrt(rss / (50 - 3)), rel=1e-12)
    assert not m.degenerate


def test_logistic_symmetric_design_zero_intercept():
    X = np.column_stack([np.ones(4), [-1.0, -1.0, 1.0, 1.0]])
    y = np.array([0.0, 1.0, 0.0, 1.0])
    m = fit_glm(X, y, "logistic")
    assert abs(m.coefficients[0]) < 1e-10
    assert abs(m.coefficients[1]) < 1e-10


@pytest.mark.parametrize("family", ["linear", "logistic", "poisson"])
@pytest.mark.parametrize("seed", range(10))
def test_matches_multistart_newton(family, seed):
    X, y = _instance(family, n=30, seed=seed)
    m = fit_glm(X, y, family)
    oracle = newton_glm(X, y, family, starts=3, seed=seed)
    assert np.max(np.abs(m.coefficients - oracle)) < 1e-6


@pytest.mark.parametrize("family", ["linear", "logistic", "poisson"])
def test_weighted_fit_matches_oracle(family):
    X, y = _instance(family, n=40, seed=3)
    w = np.random.default_rng(3).uniform(0.2, 3.0, 40)
    m = fit_glm(X, y, family, weights=w)
    assert np.max(np.abs(m.coefficients - newton_glm(X, y, family, weights=w))) < 1e-6


@pytest.mark.parametrize("family", ["logistic", "poisson"])
@pytest.mark.parametrize("seed", range(5))
def test_score_zero_at_optimum(family, seed):
    X, y = _instance(family, n=60, p=4, seed=seed)
    m = fit_glm(X, y, family)
    assert np.max(np.abs(score(family, X, y, m.coefficients))) < 1e-8


@pytest.mark.parametrize("family", ["linear", "logistic", "poisson"])
def test_score_matches_finite_difference(family):
    X, y = _instance(family, n=40, seed=9)
    rng = np.random.default_rng(2)
    for _ in range(5):
        b = rng.normal(0, 0.3, X.shape[1])
        g = score(family, X, y, b)
        eps = 1e-6
        fd = np.empty_like(b)
        for j in range(len(b)):
            e = np.zeros_like(b)
            e[j] = eps
            # score = -0.5 * d deviance / d beta
            dp = deviance(family, y, _mu(family, X @ (b + e)))
            dm = deviance(family, y, _mu(family, X @ (b - e)))
            fd[j] = -0.25 * (dp - dm) / eps
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-5)


def _mu(family, eta):
    if family == "poisson":
        return np.exp(eta)
    if family == "logistic":
        return 1 / (1 + np.exp(-eta))
    return eta


@given(st.integers(0, 10_000), st.sampled_from(["linear", "logistic", "poisson"]))
@settings(max_examples=40, deadline=None)
def test_deviance_non_increasing(seed, family):
    X, y = _instance(family, n=25, seed=seed)
    if family == "logistic" and (y.min() == y.max()):
        return
    try:
        _, hist, _, _ = irls(family, X, y)
    except SeparationError:
        return
    assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(hist, hist[1:]))


def test_separation_detected():
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    y = (np.arange(10) >= 5).astype(float)
    with pytest.raises(SeparationError):
        fit_glm(X, y, "logistic")


def test_rank_deficiency_names_columns():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(20)
    X = np.column_stack([np.ones(20), a, 2 * a])
    with pytest.raises(RankDeficiencyError) as info:
        fit_glm(X, rng.standard_normal(20), "linear", ("intercept", "a", "a2"))
    assert {"a", "a2"} <= set(info.value.columns)


def test_input_validation():
    X = np.ones((5, 1))
    with pytest.raises(DataError):
        fit_glm(X, np.array([0, 1, 2, 0, 1.0]), "logistic")
    with pytest.raises(DataError):
        fit_glm(X, -np.ones(5), "poisson")
    with pytest.raises(ParameterError):
        fit_glm(X, np.ones(5), "gamma")
    with pytest.raises(DataError):
        fit_glm(np.ones((2, 3)), np.ones(2), "linear")


def test_fitted_model_json_roundtrip():
    X, y = _instance("poisson", n=40)
    m = fit_glm(X, y, "poisson", ("a", "b", "c"))
    back = FittedModel.from_json(m.to_json())
    assert np.array_equal(back.coefficients, m.coefficients)
    assert back.column_names == m.column_names and back.family == "poisson"


# spatial smooth ---------------------------------------------------------------


def test_farthest_point_knots_spread():
    g = grid_coordinates(10)
    knots = farthest_point_knots(g, 8)
    assert len(np.unique(knots, axis=0)) == 8
    assert all(any(np.array_equal(k, p) for p in g) for k in knots)
    # well spread: no two knots closer than two grid steps
    d = np.hypot(*(knots[:, None, :] - knots[None, :, :]).transpose(2, 0, 1))
    assert d[np.triu_indices(8, 1)].min() > 2 / 9


def test_smooth_surface_recovered():
    coords = grid_coordinates(22)
    truth = np.sin(3 * coords[:, 0]) + np.cos(2 * coords[:, 1]) * coords[:, 0]
    rng = np.random.default_rng(4)
    y = truth + rng.normal(0, 0.2, len(truth))
    m = fit_spatial_glm(np.ones((len(y), 1)), y, "linear", coords, ("intercept",))
    fitted = m.predict(np.ones((len(y), 1)), coords)
    assert np.corrcoef(fitted, truth)[0, 1] > 0.95


def test_covariate_only_signal_selects_heavy_penalty():
    coords = grid_coordinates(22)
    rng = np.random.default_rng(5)
    x = rng.standard_normal(len(coords))
    X = np.column_stack([np.ones(len(x)), x])
    y = 1 + 2 * x + rng.normal(0, 1, len(x))
    m = fit_spatial_glm(X, y, "linear", coords, ("intercept", "x"))
    assert m.edf < 2


@pytest.mark.parametrize("family", ["linear", "logistic", "poisson"])
def test_infinite_penalty_equals_plain_glm(family):
    coords = grid_coordinates(12)
    X, y = _instance(family, n=len(coords), seed=8)
    plain = fit_glm(X, y, family)
    smooth = fit_spatial_glm(X, y, family, coords, penalty=1e12)
    assert np.max(np.abs(smooth.coefficients[: X.shape[1]] - plain.coefficients)) < 1e-6


def test_spatial_prediction_at_new_coordinates():
    coords = grid_coordinates(15)
    y = coords[:, 0] * 2 + coords[:, 1] ** 2
    m = fit_spatial_glm(np.ones((len(y), 1)), y, "linear", coords)
    new = np.array([[0.5, 0.5], [0.25, 0.75]])
    pred = m.predict(np.ones((2, 1)), new)
    assert np.allclose(pred, new[:, 0] * 2 + new[:, 1] ** 2, atol=0.05)
    with pytest.raises(DataError):
        m.predict(np.ones((2, 1)))


def test_spatial_needs_ten_locations():
    coords = np.repeat(grid_coordinates(3), 3, axis=0)
    with pytest.raises(DataError):
        fit_spatial_glm(np.ones((27, 1)), np.ones(27), "linear", coords)


def test_spatial_model_roundtrip():
    coords = grid_coordinates(12)
    X, y = _instance("logistic", n=len(coords), seed=2)
    m = fit_spatial_glm(X, y, "logistic", coords)
    back = FittedModel.from_json(m.to_json())
    assert np.allclose(back.predict(X, coords), m.predict(X, coords), rtol=0, atol=1e-14)
    assert isinstance(back.smooth, RadialBasis)
