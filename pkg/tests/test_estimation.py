import math

import numpy as np
import pytest

from cgpssm import estimation
from cgpssm.datagen import GeneratorCoefficients, ScenarioConfig, generate_dataset
from cgpssm.errors import DataError, NumericalError
from cgpssm.estimation import (
    AttEstimate,
    SimulationReport,
    bootstrap_att,
    naive_ipw_att,
    simulation_metrics,
    unadjusted_poisson,
)
from cgpssm.gps import build_gps_records, estimate_ps, fit_cgps_model, fit_ps_model
from cgpssm.matching import MatchSpec, distance_match, gps_match
from cgpssm.models.conditional import fit_conditional_poisson
from cgpssm.models.glm import fit_glm
from cgpssm.spatial import MaternParams

from oracles import newton_glm

COVS = ["x1", "x2", "x3", "u"]


def _matched(rep=0, scen=(1, 1), cw=0.4, replacement=True):
    d = generate_dataset(ScenarioConfig(MaternParams(*scen)), rep)
    strata = distance_match(d, 0.1)
    ps = estimate_ps(fit_ps_model(d, COVS, "glm"), d.matrix(COVS))
    recs = build_gps_records(strata, ps, fit_cgps_model(d, COVS, "glm"), d, COVS)
    spec = MatchSpec(method="caliper", cw=cw, replacement=replacement)
    return d, gps_match(strata, recs, spec).pairs


@pytest.fixture(scope="module")
def matched():
    return _matched()


def test_identity_bootstrap_equals_direct_fit(matched):
    d, pairs = matched
    est = bootstrap_att(pairs, d, B=1, resample=False)
    idx = d.index_of()
    e = [idx[p.exposed_id] for p in pairs]
    u = [idx[p.unexposed_id] for p in pairs]
    z = np.r_[d.zc[e], d.zc[u]]
    y = np.r_[d.outcome[e], d.outcome[u]]
    strata = np.r_[np.arange(len(pairs)), np.arange(len(pairs))]
    fit = fit_conditional_poisson(z[:, None], y, strata)
    assert est.coefficient == pytest.approx(fit.coefficients[0], abs=1e-12)
    assert est.se == pytest.approx(fit.standard_errors[0], abs=1e-12)


def test_bootstrap_deterministic_and_ci(matched):
    d, pairs = matched
    a = bootstrap_att(pairs, d, B=50, seed=3)
    b = bootstrap_att(pairs, d, B=50, seed=3)
    assert a == b
    assert a.ci_low <= a.coefficient <= a.ci_high
    assert a.ci_high - a.coefficient == pytest.approx(1.959963984540054 * a.se)
    assert a.n_bootstrap == 50 and a.n_pairs == len(pairs) and a.bootstrap_sd > 0


def test_bootstrap_mean_converges(matched):
    d, pairs = matched
    a = bootstrap_att(pairs, d, B=500, seed=1)
    b = bootstrap_att(pairs, d, B=2000, seed=2)
    assert abs(a.coefficient - b.coefficient) < 0.5 * a.se


def test_within_pair_permutation_null():
    # without replacement each unit sits in one pair, so swaps do not collide
    d, pairs = _matched(replacement=False)
    rng = np.random.default_rng(0)
    idx = d.index_of()
    coefs, ses = [], []
    for _ in range(200):
        y = d.outcome.copy()
        for p in pairs:
            if rng.random() < 0.5:
                i, j = idx[p.exposed_id], idx[p.unexposed_id]
                y[i], y[j] = y[j], y[i]
        est = bootstrap_att(pairs, d.with_outcome(y), B=1, resample=False)
        coefs.append(est.coefficient)
        ses.append(est.se)
    # the permutation distribution is centred on zero, inside the reported CI
    assert abs(np.mean(coefs)) < 1.959963984540054 * np.mean(ses)
    assert abs(np.mean(coefs)) < 3 * np.std(coefs, ddof=1) / np.sqrt(len(coefs))


def test_bootstrap_errors(matched, monkeypatch):
    d, pairs = matched
    with pytest.raises(DataError):
        bootstrap_att([], d)
    calls = {"n": 0}
    real = estimation._fit_pairs

    def flaky(*args):
        calls["n"] += 1
        if calls["n"] % 10 == 0:
            raise NumericalError("boom")
        return real(*args)

    monkeypatch.setattr(estimation, "_fit_pairs", flaky)
    with pytest.raises(NumericalError):
        bootstrap_att(pairs, d, B=40)  # 10% failures exceeds the 5% limit


def test_bootstrap_reports_rare_failures(matched, monkeypatch):
    d, pairs = matched
    calls = {"n": 0}
    real = estimation._fit_pairs

    def rare(*args):
        calls["n"] += 1
        if calls["n"] == 7:
            raise NumericalError("boom")
        return real(*args)

    monkeypatch.setattr(estimation, "_fit_pairs", rare)
    est = bootstrap_att(pairs, d, B=40)
    assert est.n_failed == 1


def test_unadjusted_matches_oracle():
    d = generate_dataset(ScenarioConfig(), 0)
    est = unadjusted_poisson(d)
    X = np.column_stack([np.ones(d.n), d.zc, d.matrix(["x1", "x2", "x3"])])
    assert est.coefficient == pytest.approx(newton_glm(X, d.outcome, "poisson", starts=1)[1], abs=1e-8)


def test_unadjusted_unbiased_without_u():
    coef = GeneratorCoefficients(zb_betas=(1, 1.4, 0.8, 0), zc_betas=(2, 4, 3.5, 0), y_betas=(0.15, 0.23, 0.31, 0))
    cfg = ScenarioConfig(coefficients=coef)
    est = np.array([unadjusted_poisson(generate_dataset(cfg, r)).coefficient for r in range(60)])
    assert abs(est.mean() - 0.03) < 3 * est.std(ddof=1) / math.sqrt(len(est))


def test_unadjusted_undercovers_under_confounding():
    cfg = ScenarioConfig(MaternParams(1, 1))
    cov = np.mean([unadjusted_poisson(generate_dataset(cfg, r)).covers(0.03) for r in range(30)])
    assert cov < 0.5


def test_ipw_equal_weights_is_unweighted_poisson():
    d = generate_dataset(ScenarioConfig(), 1)
    est = naive_ipw_att(d, weights=np.full(d.n, 2.5))
    plain = fit_glm(np.column_stack([np.ones(d.n), d.zc]), d.outcome, "poisson")
    assert est.coefficient == pytest.approx(plain.coefficients[1], abs=1e-10)


def test_ipw_weights_truncated():
    d = generate_dataset(ScenarioConfig(), 2)
    w = estimation.ipw_weights(d, gps_model="glm")
    assert np.all(w > 0)
    assert np.isclose(w.max(), np.quantile(w, 1.0)) and np.mean(w == w.max()) >= 0.01


def test_metrics_trivial():
    r = simulation_metrics([AttEstimate.from_coef(0.03, 0.01)] * 3)
    assert (r.bias_percent, r.rmse, r.coverage_percent) == (0.0, 0.0, 100.0)
    r = simulation_metrics([AttEstimate.from_coef(0.02, 0.001), AttEstimate.from_coef(0.04, 0.001)])
    assert r.bias_percent == pytest.approx(0, abs=1e-10) and r.rmse == pytest.approx(0.01)
    assert r.coverage_percent == 0
    with pytest.raises(DataError):
        simulation_metrics([AttEstimate.from_coef(0.03, 0.01)])


def test_metrics_hand_oracle():
    tuples = [(0.025, 0.004), (0.031, 0.002), (0.040, 0.003), (0.028, 0.001), (0.035, 0.006)]
    r = simulation_metrics([AttEstimate.from_coef(c, s) for c, s in tuples])
    mean = sum(c for c, _ in tuples) / 5  # 0.0318
    assert r.bias_percent == pytest.approx(100 * (0.0318 - 0.03) / 0.03, rel=1e-12)
    sq = [(c - 0.03) ** 2 for c, _ in tuples]
    assert r.rmse == pytest.approx(math.sqrt(sum(sq) / 5), rel=1e-12)
    cover = [c - 1.959963984540054 * s <= 0.03 <= c + 1.959963984540054 * s for c, s in tuples]
    assert cover == [True, True, False, False, True]
    assert r.coverage_percent == 60.0
    assert mean == pytest.approx(r.mean_coefficient)


def test_estimate_and_report_roundtrip():
    e = AttEstimate.from_coef(0.031, 0.002, n_bootstrap=10, bootstrap_sd=0.003, n_pairs=5)
    assert AttEstimate.from_dict(e.to_dict()) == e
    r = simulation_metrics([e, AttEstimate.from_coef(0.03, 0.001)], scenario=(1.0, 0.5), method="x")
    assert SimulationReport.from_dict(r.to_dict()) == r


def test_rescaled_per_sd():
    e = AttEstimate.from_coef(0.03, 0.002, bootstrap_sd=0.004)
    s = e.rescaled(10.0, "per_sd")
    assert s.coefficient == pytest.approx(0.3) and s.se == pytest.approx(0.02)
    assert s.bootstrap_sd == pytest.approx(0.04) and s.scale == "per_sd"
