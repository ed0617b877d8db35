import json

import numpy as np
import pytest

from stzip.errors import ConfigurationError
from stzip.simgen import SimScenario, default_truth, gp_draw, simulate, text_truth


def test_default_truth_matches_table_values():
    sc = default_truth()
    # the true-value column of the simulation summary table
    assert sc.beta == (0.5, 0.5)
    assert sc.gamma == (-1.5, -1.0)
    assert sc.v == (0.0, 0.3, 0.6, 0.9, 1.2, 1.5)
    assert sc.eta == (0.0, 0.4, 0.8, 0.8, 0.4, 0.0)
    assert sc.v[5] == 1.5 and sc.eta[5] == 0.0
    assert sc.v[0] == sc.eta[0] == 0.0


def test_default_design_constants():
    sc = default_truth()
    assert (sc.T, sc.N, sc.box, sc.gp_variance, sc.h_u, sc.h_xi, sc.covariate_sd) == (
        6, 400, (-2.0, 2.0), 0.5, 0.5, 0.9, 0.5)


def test_text_truth_is_selectable():
    sc = text_truth()
    assert sc.v == (0.0, 0.4, 0.8, 1.2, 1.6, 2.0)
    assert sc.eta == (0.0, 0.5, 1.0, 1.0, 0.5, 0.0)
    assert SimScenario.from_dict({"truth": "text"}).v == sc.v
    with pytest.raises(ConfigurationError):
        SimScenario.from_dict({"truth": "prose"})
    with pytest.raises(ConfigurationError):
        SimScenario.from_dict({"bogus": 1})


@pytest.mark.parametrize("kw", [dict(T=0), dict(v=(0, 1)), dict(v=(1, 0, 0, 0, 0, 0)), dict(h_u=0.0),
                                dict(gp_variance=-1.0), dict(beta=(1.0,)), dict(box=(1.0, 1.0))])
def test_invalid_scenarios(kw):
    with pytest.raises(ConfigurationError):
        SimScenario(**kw)


@pytest.fixture(scope="module")
def default_sim():
    return simulate(default_truth())


def test_layout(default_sim):
    data, truth = default_sim
    assert data.n == 2400
    np.testing.assert_array_equal(np.bincount(data.period)[1:], np.full(6, 400))
    assert np.all(np.abs(data.locs) <= 2.0)
    np.testing.assert_array_equal(data.X[:, 0], 1.0)
    assert data.X[:, 1].std() == pytest.approx(0.5, rel=0.1)


def test_structural_zeros_have_zero_counts(default_sim):
    data, truth = default_sim
    assert np.all(data.y[truth.z == 1] == 0)


def test_truth_record_is_consistent(default_sim):
    data, truth = default_sim
    sc = truth.scenario
    t = data.period - 1
    np.testing.assert_allclose(truth.log_lambda, data.X @ sc.beta + truth.u + np.asarray(sc.v)[t])
    np.testing.assert_allclose(truth.zero_mean, data.X @ sc.gamma + truth.xi + np.asarray(sc.eta)[t])
    doc = json.loads(truth.to_json())
    assert len(doc["u"]) == 2400 and doc["scenario"]["beta"] == [0.5, 0.5]


def test_deterministic_under_seed():
    sc = SimScenario(T=2, N=50, v=(0, 0.3), eta=(0, 0.4), seed=9)
    a, _ = simulate(sc)
    b, _ = simulate(sc)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.locs, b.locs)
    c, _ = simulate(SimScenario(T=2, N=50, v=(0, 0.3), eta=(0, 0.4), seed=10))
    assert not np.array_equal(a.locs, c.locs)


def test_zero_variance_removes_fields():
    data, truth = simulate(SimScenario(T=2, N=100, v=(0, 0.3), eta=(0, 0.4), gp_variance=0.0))
    assert np.all(truth.u == 0) and np.all(truth.xi == 0)


def test_gp_covariance_at_fixed_pair():
    # Cov(u(s), u(s')) at distance 0.5 with h = 0.5 is 0.5 * exp(-1)
    locs = np.array([[0.0, 0.0], [0.5, 0.0]])
    rng = np.random.default_rng(0)
    draws = np.array([gp_draw(locs, 0.5, 0.5, rng) for _ in range(4000)])
    cov = np.cov(draws, rowvar=False)
    assert cov[0, 1] == pytest.approx(0.5 * np.exp(-1), rel=0.1)
    assert cov[0, 0] == pytest.approx(0.5, rel=0.1)


def test_field_variance_over_replicates():
    vals = []
    for seed in range(200):
        _, truth = simulate(SimScenario(T=1, N=30, v=(0,), eta=(0,), seed=seed))
        vals.append(truth.u[0])
    assert np.var(vals) == pytest.approx(0.5, rel=0.15)


def test_expected_count_and_zero_prob(default_sim):
    _, truth = default_sim
    from scipy.stats import norm

    m, lam = truth.zero_mean, np.exp(truth.log_lambda)
    np.testing.assert_allclose(truth.expected_count, (1 - norm.cdf(m)) * lam)
    np.testing.assert_allclose(truth.zero_prob, norm.cdf(m) + (1 - norm.cdf(m)) * np.exp(-lam))
