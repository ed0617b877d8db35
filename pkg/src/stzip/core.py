"""Domain types for point-referenced zero-inflated count data.

Observations carry a 1-based period index, a planar location, a count and a
covariate row whose first entry is normally an explicit intercept. The
dataset keeps everything as contiguous numpy arrays so the samplers can work
vectorized; :class:`Observation` is the per-point view used by the scalar
helpers in this module.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import ConfigurationError, InputError


class ModelKind(str, Enum):
    STZIP = "stzip"
    STP = "stp"
    ZIP = "zip"


@dataclass(frozen=True)
class Observation:
    period: int
    location: np.ndarray
    count: int
    covariates: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.location, dtype=float)
        if loc.shape != (2,) or not np.all(np.isfinite(loc)):
            raise InputError(f"location must be a finite 2-vector, got {self.location!r}")
        if int(self.count) != self.count or self.count < 0:
            raise InputError(f"count must be a non-negative integer, got {self.count!r}")
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "covariates", np.atleast_1d(np.asarray(self.covariates, dtype=float)))
        object.__setattr__(self, "count", int(self.count))
        object.__setattr__(self, "period", int(self.period))


@dataclass
class SurveyDataset:
    """Counts ``y``, locations ``locs`` (n, 2), 1-based ``period`` and design ``X``.

    ``T`` may exceed the largest observed period: periods without
    observations are allowed and simply contribute no likelihood terms.
    """

    period: np.ndarray
    locs: np.ndarray
    y: np.ndarray
    X: np.ndarray
    T: Optional[int] = None
    covariate_names: Optional[list] = None

    def __post_init__(self):
        self.period = np.asarray(self.period, dtype=np.int64).ravel()
        self.locs = np.asarray(self.locs, dtype=float).reshape(-1, 2)
        y = np.asarray(self.y)
        if y.size and (np.any(y < 0) or np.any(np.asarray(y, dtype=float) != np.round(y))):
            raise InputError("counts must be non-negative integers")
        self.y = y.astype(np.int64).ravel()
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        self.X = X
        n = self.y.size
        if not (self.period.size == self.locs.shape[0] == X.shape[0] == n):
            raise InputError(
                f"length mismatch: period={self.period.size}, locs={self.locs.shape[0]}, "
                f"X={X.shape[0]}, y={n}"
            )
        if not np.all(np.isfinite(self.locs)):
            raise InputError("locations must be finite")
        if not np.all(np.isfinite(X)):
            raise InputError("covariates must be finite (missing values are not supported)")
        if self.T is None:
            self.T = int(self.period.max()) if n else 1
        self.T = int(self.T)
        if self.T < 1:
            raise InputError("T must be >= 1")
        if n and (self.period.min() < 1 or self.period.max() > self.T):
            raise InputError(f"period indices must lie in 1..{self.T}")
        if self.covariate_names is None:
            self.covariate_names = [f"x{j + 1}" for j in range(X.shape[1])]
        elif len(self.covariate_names) != X.shape[1]:
            raise InputError("covariate_names does not match the design width")

    @classmethod
    def from_observations(cls, observations: Sequence[Observation], T: Optional[int] = None):
        if not observations:
            raise InputError("empty observation list")
        dims = {o.covariates.size for o in observations}
        if len(dims) != 1:
            raise InputError(f"covariate dimension differs across observations: {sorted(dims)}")
        return cls(
            period=[o.period for o in observations],
            locs=np.stack([o.location for o in observations]),
            y=[o.count for o in observations],
            X=np.stack([o.covariates for o in observations]),
            T=T,
        )

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def tix(self) -> np.ndarray:
        """0-based period index per observation."""
        return self.period - 1

    @property
    def N_t(self) -> np.ndarray:
        return np.bincount(self.tix, minlength=self.T)

    def __len__(self):
        return self.n

    def __iter__(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield self[i]

    def __getitem__(self, i) -> Observation:
        return Observation(int(self.period[i]), self.locs[i], int(self.y[i]), self.X[i])

    def subset(self, mask, T: Optional[int] = None) -> "SurveyDataset":
        mask = np.asarray(mask)
        return SurveyDataset(
            self.period[mask], self.locs[mask], self.y[mask], self.X[mask],
            T=self.T if T is None else T, covariate_names=list(self.covariate_names),
        )


@dataclass
class LatentState:
    """Per-observation latents: structural-zero flag, probit score, PG weight.

    ``omega`` is only meaningful where ``z == 0``; it is held at 0 elsewhere
    so masked sums stay finite.
    """

    z: np.ndarray
    g: np.ndarray
    omega: np.ndarray

    def copy(self) -> "LatentState":
        return LatentState(self.z.copy(), self.g.copy(), self.omega.copy())


@dataclass
class ModelState:
    beta: np.ndarray
    gamma: np.ndarray
    mu_u: np.ndarray
    mu_xi: np.ndarray
    v: np.ndarray
    eta: np.ndarray
    tau_u: float
    tau_xi: float
    sigma2_v: float
    sigma2_eta: float
    h_u: float
    h_xi: float
    latent: LatentState
    tau_P1: float = 1.0
    tau_P2: float = 1.0

    def copy(self) -> "ModelState":
        out = dataclasses.replace(self)
        for name in ("beta", "gamma", "mu_u", "mu_xi", "v", "eta"):
            setattr(out, name, getattr(self, name).copy())
        out.latent = self.latent.copy()
        return out

    def check_invariants(self, y: Optional[np.ndarray] = None):
        if self.v.size and self.v[0] != 0.0:
            raise AssertionError("v[1] must stay 0")
        if self.eta.size and self.eta[0] != 0.0:
            raise AssertionError("eta[1] must stay 0")
        for name in ("tau_u", "tau_xi", "sigma2_v", "sigma2_eta", "tau_P1", "tau_P2"):
            if not getattr(self, name) > 0:
                raise AssertionError(f"{name} must be positive")
        lat = self.latent
        if y is not None and np.any((lat.z == 1) & (y > 0)):
            raise AssertionError("structural zero assigned to a positive count")
        if np.any((lat.g > 0) != (lat.z == 1)):
            raise AssertionError("sign of g disagrees with z")
        if np.any(lat.omega < 0) or np.any(lat.omega[lat.z == 1] != 0):
            raise AssertionError("omega must be non-negative and 0 on structural zeros")


@dataclass
class SamplerPlan:
    model_kind: ModelKind = ModelKind.STZIP
    iterations: int = 45000
    burn_in: int = 5000
    thin: int = 1
    seed: int = 0
    store_fitted: bool = False

    def __post_init__(self):
        self.model_kind = ModelKind(self.model_kind)
        if not self.iterations > self.burn_in >= 0:
            raise ConfigurationError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise ConfigurationError("thin must be >= 1")

    @property
    def n_stored(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


def _as_cov(value, p: int, name: str) -> np.ndarray:
    if value is None:
        return 100.0 * np.eye(p)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(p)
    if arr.ndim == 1:
        arr = np.diag(arr)
    if arr.shape != (p, p):
        raise ConfigurationError(f"{name} must be {p}x{p}, got {arr.shape}")
    if not np.allclose(arr, arr.T):
        raise ConfigurationError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(arr)
    except np.linalg.LinAlgError:
        raise ConfigurationError(f"{name} must be positive definite") from None
    return arr


@dataclass
class PriorConfig:
    """Priors, surrogate parameter, bandwidth grid and MCMC controls.

    Scalar hyperparameters ``d_*`` are used as both shape and rate of the
    Gamma / inverse-Gamma priors. ``D_beta``/``D_gamma`` may be a scalar
    (times identity), a diagonal vector or a full matrix; ``None`` means
    ``100 * I`` sized to the design once it is known.

    ``bandwidth_update="conditional"`` draws each bandwidth given the knot
    values; the default ``"collapsed"`` integrates the knot values out first,
    which mixes far better because the knot values pin the bandwidth.
    ``joint_blocks`` draws the regression coefficients together with the
    knot values of the matching field, so the intercept can trade level
    with the field mean in one step. The collapsed move for ``h_u`` costs a
    few Laplace fits, so it runs every ``bandwidth_move_every`` sweeps.
    """

    D_beta: object = None
    D_gamma: object = None
    d_tau_u: float = 1.0
    d_tau_xi: float = 1.0
    d_sigma_v: float = 1.0
    d_sigma_eta: float = 1.0
    d_tau_P: float = 1.0
    delta: float = 1e4
    bandwidth_grid: Optional[Sequence[float]] = None
    bandwidth_weights: Optional[Sequence[float]] = None
    M: int = 100
    bandwidth_update: str = "collapsed"
    joint_blocks: bool = True
    bandwidth_move_every: int = 5
    mcmc: SamplerPlan = field(default_factory=SamplerPlan)
    spline: Optional[dict] = None

    def __post_init__(self):
        for name in ("d_tau_u", "d_tau_xi", "d_sigma_v", "d_sigma_eta", "d_tau_P"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.delta < 1e3:
            raise ConfigurationError(f"delta must be >= 1e3 for the surrogate regime, got {self.delta}")
        if self.M < 1:
            raise ConfigurationError("M must be >= 1")
        if self.bandwidth_update not in ("collapsed", "conditional"):
            raise ConfigurationError("bandwidth_update must be 'collapsed' or 'conditional'")
        if int(self.bandwidth_move_every) < 1:
            raise ConfigurationError("bandwidth_move_every must be >= 1")
        if self.bandwidth_grid is not None:
            grid = np.asarray(self.bandwidth_grid, dtype=float).ravel()
            if grid.size == 0 or np.any(grid <= 0):
                raise ConfigurationError("bandwidth_grid must be non-empty with positive entries")
            self.bandwidth_grid = grid
        if self.bandwidth_weights is not None:
            w = np.asarray(self.bandwidth_weights, dtype=float).ravel()
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ConfigurationError("bandwidth_weights must be non-negative and sum to 1")
            if self.bandwidth_grid is not None and w.size != self.bandwidth_grid.size:
                raise ConfigurationError("bandwidth_weights length differs from bandwidth_grid")
            self.bandwidth_weights = w
        if isinstance(self.mcmc, dict):
            self.mcmc = SamplerPlan(**self.mcmc)

    def cov_beta(self, p: int) -> np.ndarray:
        return _as_cov(self.D_beta, p, "D_beta")

    def cov_gamma(self, p: int) -> np.ndarray:
        return _as_cov(self.D_gamma, p, "D_gamma")

    def grid_weights(self, L: int) -> np.ndarray:
        if self.bandwidth_weights is None:
            return np.full(L, 1.0 / L)
        return self.bandwidth_weights


def _check_dim(coef: np.ndarray, x: np.ndarray, name: str):
    if coef.shape[-1] != x.shape[-1]:
        raise ConfigurationError(
            f"covariate dimension {x.shape[-1]} does not match {name} dimension {coef.shape[-1]}"
        )


def _period_effect(effects: np.ndarray, period: int) -> float:
    # periods past the fitted horizon carry the last effect forward
    return float(effects[min(period, effects.size) - 1])


def linear_predictor_intensity(state: ModelState, obs: Observation, projector_u=None) -> float:
    """Log intensity ``x'beta + u(s) + v_t`` at one observation."""
    _check_dim(state.beta, obs.covariates, "beta")
    u = 0.0 if projector_u is None else float(projector_u.project(obs.location) @ state.mu_u)
    return float(obs.covariates @ state.beta) + u + _period_effect(state.v, obs.period)


def linear_predictor_zero(state: ModelState, obs: Observation, projector_xi=None) -> float:
    """Probit mean ``x'gamma + xi(s) + eta_t`` at one observation."""
    _check_dim(state.gamma, obs.covariates, "gamma")
    xi = 0.0 if projector_xi is None else float(projector_xi.project(obs.location) @ state.mu_xi)
    return float(obs.covariates @ state.gamma) + xi + _period_effect(state.eta, obs.period)


def mean_and_zero_prob(log_lam, m_g):
    """Vectorized ``E[y]`` and ``P(y = 0)`` from the two linear predictors."""
    log_lam = np.asarray(log_lam, dtype=float)
    m_g = np.asarray(m_g, dtype=float)
    lam = np.exp(log_lam)
    keep = ndtr(-m_g)  # 1 - Phi(m_g) without cancellation
    mean = keep * lam
    p0 = ndtr(m_g) + keep * np.exp(-lam)
    return mean, np.clip(p0, 0.0, 1.0)


def marginal_mean_and_zero_prob(state: ModelState, obs: Observation, projectors=(None, None)):
    """Return ``(E[y | params], P(y = 0 | params))`` for one observation."""
    proj_u, proj_xi = projectors
    m_lam = linear_predictor_intensity(state, obs, proj_u)
    m_g = linear_predictor_zero(state, obs, proj_xi)
    mean, p0 = mean_and_zero_prob(m_lam, m_g)
    return float(mean), float(p0)


def iter_chunks(n: int, size: int) -> Iterable[slice]:
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))
