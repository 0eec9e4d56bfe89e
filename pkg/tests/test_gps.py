import math

import numpy as np
import pytest
from scipy.stats import norm

from cgpssm.datagen import Dataset, ScenarioConfig, generate_dataset
from cgpssm.errors import DataError, ParameterError
from cgpssm.gps import (
    DoseModel,
    GpsRecord,
    build_gps_records,
    compose_gps,
    estimate_cgps,
    estimate_ps,
    fit_cgps_model,
    fit_ps_model,
    read_gps_csv,
    write_gps_csv,
)
from cgpssm.matching import distance_match
from cgpssm.models.glm import FittedModel, fit_glm
from cgpssm.spatial import MaternParams


def _dose_model(coefs, sd, subset="exposed"):
    return FittedModel("linear", np.asarray(coefs, float), ("intercept", "x1"),
                       residual_sd=sd, subset=subset)


def test_intercept_only_ps_is_marginal_rate():
    y = np.r_[np.ones(15), np.zeros(85)]
    m = fit_glm(np.ones((100, 1)), y, "logistic")
    ps = estimate_ps(m, np.empty((100, 0)))
    assert np.allclose(ps, 0.15, atol=1e-10)


def test_ps_clamped():
    m = FittedModel("logistic", np.array([60.0]), ("intercept",))
    assert estimate_ps(m, np.empty((3, 0)))[0] == 1 - 1e-6
    m = FittedModel("logistic", np.array([-60.0]), ("intercept",))
    assert estimate_ps(m, np.empty((3, 0)))[0] == 1e-6


def test_ps_rejects_wrong_models():
    with pytest.raises(ParameterError):
        estimate_ps(FittedModel("linear", np.array([0.0]), ("i",)), np.empty((2, 0)))
    with pytest.raises(ParameterError):
        estimate_ps(object(), np.empty((2, 0)))


def test_true_ps_calibration_slope():
    slopes = []
    for r in range(20):
        d = generate_dataset(ScenarioConfig(MaternParams(1, 1)), r)
        covs = ["x1", "x2", "x3", "u"]
        ps = estimate_ps(fit_ps_model(d, covs, "glm"), d.matrix(covs))
        truth = -3 + d.matrix(covs) @ np.array([1, 1.4, 0.8, 1.3])
        slopes.append(np.polyfit(truth, np.log(ps / (1 - ps)), 1)[0])
    slopes = np.array(slopes)
    assert abs(slopes.mean() - 1) < 3 * slopes.std(ddof=1) / math.sqrt(len(slopes)) + 0.05


def test_cgps_density_examples():
    m = _dose_model([50.0, 0.0], 5.0)
    X = np.zeros((1, 1))
    assert estimate_cgps(m, X, 50.0)[0] == pytest.approx(1 / math.sqrt(2 * math.pi * 25), rel=1e-14)
    val = estimate_cgps(m, X, 55.0)[0]
    assert val == pytest.approx(math.exp(-0.5) / math.sqrt(2 * math.pi * 25), rel=1e-14)
    assert val == pytest.approx(0.0484, abs=5e-5)
    assert val == pytest.approx(norm.pdf(55, 50, 5), rel=1e-12)
    assert estimate_cgps(m, X, 45.0)[0] == pytest.approx(val, rel=1e-15)


def test_cgps_requires_exposed_provenance_and_positive_sd():
    X = np.zeros((1, 1))
    with pytest.raises(ParameterError):
        estimate_cgps(_dose_model([50, 0], 5.0, subset=None), X, 50.0)
    with pytest.raises(DataError):
        estimate_cgps(_dose_model([50, 0], 0.0), X, 50.0)


def test_compose_gps():
    assert compose_gps(0.5, 0.90) == pytest.approx(0.45, abs=1e-15)
    assert compose_gps(0.3, 0.0) == 0
    assert compose_gps(0.6, 0.2) > compose_gps(0.4, 0.2)


def test_five_units_records(five_units):
    data, _ = five_units
    strata = distance_match(data, 0.1)
    ps = np.array([0.5, 0.2, 0.3, 0.4, 0.25])
    dose = DoseModel(_dose_model([70.0, 0.0], 20.0))
    recs = build_gps_records(strata, ps, dose, data, ["x1"])
    unit3 = {r.stratum_id: r for r in recs if r.unit_id == 3}
    assert unit3[1].w == 100 and unit3[2].w == 50
    assert unit3[1].gps != unit3[2].gps
    for r in recs:
        assert r.gps == r.ps * r.cgps
        same = {q.w for q in recs if q.stratum_id == r.stratum_id}
        assert same == {r.w}


def test_single_candidate_two_records():
    data = Dataset(np.array([1, 2]), np.array([[0, 0], [0.05, 0]]), {"x1": np.zeros(2)},
                   np.array([1, 0]), np.array([10.0, 0]), np.zeros(2))
    strata = distance_match(data, 0.1)
    recs = build_gps_records(strata, [0.5, 0.5], DoseModel(_dose_model([10, 0], 1)), data, ["x1"])
    assert len(recs) == 2
    # identical covariates and ps -> identical gps within the stratum
    assert recs[0].gps == recs[1].gps


def test_gps_csv_roundtrip(tmp_path, five_units):
    data, _ = five_units
    strata = distance_match(data, 0.1)
    recs = build_gps_records(strata, np.full(5, 0.3), DoseModel(_dose_model([60, 1], 15)), data, ["x1"])
    write_gps_csv(recs, tmp_path / "gps.csv")
    back = read_gps_csv(tmp_path / "gps.csv")
    assert back == recs
    assert all(r.gps == r.ps * r.cgps for r in back)


def test_density_concentrates_on_own_dose():
    rng = np.random.default_rng(0)
    wins = 0
    for r in range(10):
        d = generate_dataset(ScenarioConfig(MaternParams(1, 1)), r)
        covs = ["x1", "x2", "x3", "u"]
        dose = fit_cgps_model(d, covs, "glm")
        X = d.matrix(covs)[d.exposed]
        own = np.log(estimate_cgps(dose, X, d.zc[d.exposed])).mean()
        perm = np.log(estimate_cgps(dose, X, rng.permutation(d.zc[d.exposed]))).mean()
        wins += own > perm
    assert wins == 10


def test_cgps_model_fitted_on_exposed_only(small_dataset):
    dose = fit_cgps_model(small_dataset, ["x1"], "glm")
    assert dose.model.subset == "exposed"
    idx = small_dataset.exposed
    ref = fit_glm(np.column_stack([np.ones(len(idx)), small_dataset.covariates["x1"][idx]]),
                  small_dataset.zc[idx], "linear")
    assert np.allclose(dose.model.coefficients, ref.coefficients)


def test_log_dose_mode(small_dataset):
    dose = fit_cgps_model(small_dataset, ["x1"], "glm", log_dose=True)
    X = small_dataset.matrix(["x1"])[small_dataset.exposed]
    w = small_dataset.zc[small_dataset.exposed]
    mu = dose.mean(X)
    assert np.allclose(estimate_cgps(dose, X, w), norm.pdf(np.log(w), mu, dose.sd))


def test_spatial_and_boosted_ps_in_unit_interval():
    d = generate_dataset(ScenarioConfig(MaternParams(0.5, 0.5)), 1)
    for kind in ("spatial_glm", "boosted"):
        grid = {"max_depth": [2], "n_trees": [20], "learning_rate": [0.3]}
        m = fit_ps_model(d, ["x1", "x2", "x3"], kind, hyper_grid=grid, n_folds=3)
        ps = estimate_ps(m, d.matrix(["x1", "x2", "x3"]), d.coords)
        assert np.all((ps >= 1e-6) & (ps <= 1 - 1e-6))


def test_record_is_immutable():
    r = GpsRecord(1, 1, 10.0, 0.5, 0.1, 0.05)
    with pytest.raises(AttributeError):
        r.gps = 1.0
