import numpy as np
import pytest
from scipy.stats import norm, poisson

from stzip.core import (
    LatentState,
    ModelKind,
    ModelState,
    Observation,
    PriorConfig,
    SamplerPlan,
    SurveyDataset,
    iter_chunks,
    linear_predictor_intensity,
    linear_predictor_zero,
    marginal_mean_and_zero_prob,
    mean_and_zero_prob,
)
from stzip.errors import ConfigurationError, InputError
from stzip.kernels import KnotSet, build_projector


def _state(p=2, M=3, T=3, **kw):
    n = 4
    st = ModelState(
        beta=np.zeros(p), gamma=np.zeros(p), mu_u=np.zeros(M), mu_xi=np.zeros(M),
        v=np.zeros(T), eta=np.zeros(T), tau_u=1.0, tau_xi=1.0, sigma2_v=1.0, sigma2_eta=1.0,
        h_u=1.0, h_xi=1.0,
        latent=LatentState(z=np.zeros(n, np.int8), g=-np.ones(n), omega=np.ones(n)),
    )
    for k, v in kw.items():
        setattr(st, k, v)
    return st


# ----- observations and datasets ---------------------------------------------------


def test_observation_rejects_negative_count():
    with pytest.raises(InputError):
        Observation(1, (0.0, 0.0), -1, (1.0,))


def test_observation_rejects_nonfinite_location():
    with pytest.raises(InputError):
        Observation(1, (np.nan, 0.0), 0, (1.0,))


def test_dataset_counts_per_period():
    obs = [Observation(t, (0.1 * i, 0.0), i, (1.0, 0.2)) for i, t in enumerate([1, 1, 2, 3, 3, 3])]
    data = SurveyDataset.from_observations(obs)
    assert data.T == 3
    np.testing.assert_array_equal(data.N_t, [2, 1, 3])
    np.testing.assert_array_equal(data.tix, [0, 0, 1, 2, 2, 2])
    assert data[3].count == 3


def test_dataset_rejects_mixed_covariate_dimension():
    obs = [Observation(1, (0, 0), 0, (1.0,)), Observation(1, (1, 0), 0, (1.0, 2.0))]
    with pytest.raises(InputError):
        SurveyDataset.from_observations(obs)


def test_dataset_rejects_period_beyond_T():
    with pytest.raises(InputError):
        SurveyDataset([1, 3], [(0, 0), (1, 1)], [0, 1], [[1.0], [1.0]], T=2)


def test_subset_keeps_horizon_unless_overridden():
    data = SurveyDataset([1, 2, 3], [(0, 0), (1, 1), (2, 2)], [0, 1, 2], [[1.0]] * 3)
    sub = data.subset(data.period < 3)
    assert sub.n == 2 and sub.T == 3
    assert data.subset(data.period < 3, T=2).T == 2


# ----- configuration ------------------------------------------------------------------


def test_prior_defaults():
    pr = PriorConfig()
    assert pr.delta == 1e4 and pr.M == 100
    np.testing.assert_array_equal(pr.cov_beta(2), 100 * np.eye(2))
    assert pr.mcmc.iterations == 45000 and pr.mcmc.burn_in == 5000
    assert pr.mcmc.n_stored == 40000


def test_prior_rejects_small_delta():
    with pytest.raises(ConfigurationError):
        PriorConfig(delta=100.0)


@pytest.mark.parametrize("grid", [[], [0.5, -1.0]])
def test_prior_rejects_bad_grid(grid):
    with pytest.raises(ConfigurationError):
        PriorConfig(bandwidth_grid=grid)


def test_prior_rejects_unnormalized_weights():
    with pytest.raises(ConfigurationError):
        PriorConfig(bandwidth_grid=[0.5, 1.0], bandwidth_weights=[0.5, 0.6])


def test_prior_covariance_forms():
    pr = PriorConfig(D_beta=4.0, D_gamma=[1.0, 2.0])
    np.testing.assert_array_equal(pr.cov_beta(2), 4 * np.eye(2))
    np.testing.assert_array_equal(pr.cov_gamma(2), np.diag([1.0, 2.0]))
    with pytest.raises(ConfigurationError):
        PriorConfig(D_beta=[[1.0, 2.0], [0.0, 1.0]]).cov_beta(2)


def test_sampler_plan_validation():
    with pytest.raises(ConfigurationError):
        SamplerPlan(iterations=10, burn_in=10)
    assert SamplerPlan(iterations=11, burn_in=10).n_stored == 1
    assert SamplerPlan(iterations=20, burn_in=0, thin=3).n_stored == 6
    assert SamplerPlan(model_kind="zip").model_kind is ModelKind.ZIP


# ----- state invariants ---------------------------------------------------------------------


def test_invariants_accept_valid_state():
    _state().check_invariants(np.array([0, 1, 2, 3]))


@pytest.mark.parametrize(
    "mutate",
    [
        lambda s: s.v.__setitem__(0, 0.1),
        lambda s: s.eta.__setitem__(0, -0.1),
        lambda s: setattr(s, "tau_u", 0.0),
        lambda s: setattr(s, "sigma2_eta", -1.0),
        lambda s: s.latent.g.__setitem__(0, 1.0),  # g > 0 with z = 0
        lambda s: s.latent.omega.__setitem__(1, -0.5),
    ],
)
def test_invariants_catch_violations(mutate):
    s = _state()
    mutate(s)
    with pytest.raises(Exception):
        s.check_invariants(np.array([0, 1, 2, 3]))


def test_structural_zero_requires_zero_count():
    s = _state()
    s.latent.z[1] = 1
    s.latent.g[1] = 0.5
    s.latent.omega[1] = 0.0
    with pytest.raises(Exception):
        s.check_invariants(np.array([0, 1, 2, 3]))


# ----- linear predictors ---------------------------------------------------------------


def test_linear_predictors_trivial():
    obs = Observation(1, (0.0, 0.0), 0, (1.0, 0.0))
    assert linear_predictor_intensity(_state(), obs) == 0.0
    st = _state(beta=np.array([0.5, 0.5]), gamma=np.array([-1.5, -1.0]))
    assert linear_predictor_intensity(st, obs) == pytest.approx(0.5)
    assert linear_predictor_zero(st, Observation(1, (0, 0), 0, (1.0, 1.0))) == pytest.approx(-2.5)


def test_linear_predictor_dimension_mismatch():
    with pytest.raises(ConfigurationError):
        linear_predictor_intensity(_state(), Observation(1, (0, 0), 0, (1.0, 0.0, 2.0)))


def test_linear_predictors_match_naive_recomputation():
    rng = np.random.default_rng(5)
    knots = KnotSet(rng.uniform(-1, 1, (6, 2)))
    pu, px = build_projector(knots, 0.7), build_projector(knots, 1.3)
    st = _state(
        M=6, T=4, beta=rng.normal(size=3), gamma=rng.normal(size=3), mu_u=rng.normal(size=6),
        mu_xi=rng.normal(size=6), v=np.r_[0, rng.normal(size=3)], eta=np.r_[0, rng.normal(size=3)],
    )
    obs = Observation(3, (0.2, -0.4), 2, tuple(rng.normal(size=3)))

    def naive(mu, h, coef, path):
        k = np.array([np.exp(-np.sum((obs.location - kk) ** 2) / h**2) for kk in knots.knots])
        Hm = np.array([[np.exp(-np.sum((a - b) ** 2) / h**2) for b in knots.knots] for a in knots.knots])
        Hm += (pu if h == 0.7 else px).jitter * np.eye(6)
        return float(np.dot(obs.covariates, coef) + k @ np.linalg.solve(Hm, mu) + path[2])

    assert linear_predictor_intensity(st, obs, pu) == pytest.approx(naive(st.mu_u, 0.7, st.beta, st.v), abs=1e-8)
    assert linear_predictor_zero(st, obs, px) == pytest.approx(naive(st.mu_xi, 1.3, st.gamma, st.eta), abs=1e-8)


def test_marginal_moments_trivial():
    st = _state()
    mean, p0 = marginal_mean_and_zero_prob(st, Observation(1, (0, 0), 0, (1.0, 0.0)))
    assert mean == pytest.approx(0.5)
    assert p0 == pytest.approx(0.5 + 0.5 * np.exp(-1.0))


def test_marginal_moments_agree_with_mixture_oracle():
    # oracle: sum the zero-inflated pmf directly
    rng = np.random.default_rng(1)
    for _ in range(20):
        ml, mg = rng.normal(0.5, 1.0), rng.normal(-0.5, 1.0)
        pi, lam = norm.cdf(mg), np.exp(ml)
        ks = np.arange(400)
        pmf = (1 - pi) * poisson.pmf(ks, lam)
        pmf[0] += pi
        mean, p0 = mean_and_zero_prob(ml, mg)
        assert mean == pytest.approx(float(ks @ pmf), rel=1e-10)
        assert p0 == pytest.approx(pmf[0], rel=1e-12)


def test_p0_stays_in_unit_interval():
    ml = np.linspace(-30, 6, 50)[:, None]
    mg = np.linspace(-40, 40, 50)[None, :]
    _, p0 = mean_and_zero_prob(ml, mg)
    assert np.all((p0 >= 0) & (p0 <= 1))


def test_iter_chunks_covers_range():
    parts = list(iter_chunks(10, 3))
    assert [(s.start, s.stop) for s in parts] == [(0, 3), (3, 6), (6, 9), (9, 10)]
    assert list(iter_chunks(0, 3)) == []
