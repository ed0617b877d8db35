"""Synthetic zero-inflated spatio-temporal counts from exact Gaussian-process fields."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cholesky
from scipy.special import ndtr

from .core import SurveyDataset
from .errors import ConfigurationError, NumericalError
from .kernels import correlation_matrix

TABLE_V = (0.0, 0.3, 0.6, 0.9, 1.2, 1.5)
TABLE_ETA = (0.0, 0.4, 0.8, 0.8, 0.4, 0.0)
# the prose description of the design lists different time effects
TEXT_V = (0.0, 0.4, 0.8, 1.2, 1.6, 2.0)
TEXT_ETA = (0.0, 0.5, 1.0, 1.0, 0.5, 0.0)


@dataclass
class SimScenario:
    T: int = 6
    N: int = 400
    box: tuple = (-2.0, 2.0)
    gp_variance: float = 0.5
    h_u: float = 0.5
    h_xi: float = 0.9
    v: tuple = TABLE_V
    eta: tuple = TABLE_ETA
    beta: tuple = (0.5, 0.5)
    gamma: tuple = (-1.5, -1.0)
    covariate_sd: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.v = tuple(float(x) for x in self.v)
        self.eta = tuple(float(x) for x in self.eta)
        self.beta = tuple(float(x) for x in self.beta)
        self.gamma = tuple(float(x) for x in self.gamma)
        self.box = tuple(float(x) for x in self.box)
        if self.T < 1 or self.N < 1:
            raise ConfigurationError("T and N must be positive")
        if len(self.v) != self.T or len(self.eta) != self.T:
            raise ConfigurationError("time-effect vectors must have length T")
        if self.v[0] != 0.0 or self.eta[0] != 0.0:
            raise ConfigurationError("time effects must start at 0")
        if len(self.beta) != len(self.gamma) or len(self.beta) < 1:
            raise ConfigurationError("beta and gamma must share a positive length")
        if self.gp_variance < 0 or self.h_u <= 0 or self.h_xi <= 0 or self.covariate_sd < 0:
            raise ConfigurationError("variances and bandwidths must be non-negative / positive")
        if not self.box[1] > self.box[0]:
            raise ConfigurationError("box must be (low, high) with high > low")

    @classmethod
    def from_dict(cls, d: dict) -> "SimScenario":
        d = dict(d)
        truth = d.pop("truth", "table")
        if truth == "text":
            d.setdefault("v", TEXT_V)
            d.setdefault("eta", TEXT_ETA)
        elif truth != "table":
            raise ConfigurationError(f"unknown truth set {truth!r}")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown scenario fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


def default_truth() -> SimScenario:
    return SimScenario()


def text_truth() -> SimScenario:
    return SimScenario(v=TEXT_V, eta=TEXT_ETA)


@dataclass
class SimTruth:
    scenario: SimScenario
    u: np.ndarray
    xi: np.ndarray
    z: np.ndarray
    log_lambda: np.ndarray
    zero_mean: np.ndarray

    @property
    def expected_count(self) -> np.ndarray:
        return ndtr(-self.zero_mean) * np.exp(self.log_lambda)

    @property
    def zero_prob(self) -> np.ndarray:
        return ndtr(self.zero_mean) + ndtr(-self.zero_mean) * np.exp(-np.exp(self.log_lambda))

    def to_json(self) -> str:
        doc = {
            "scenario": self.scenario.to_dict(),
            "u": self.u.tolist(),
            "xi": self.xi.tolist(),
            "z": self.z.astype(int).tolist(),
            "log_lambda": self.log_lambda.tolist(),
            "zero_mean": self.zero_mean.tolist(),
        }
        return json.dumps(doc, indent=1)


def gp_draw(locs, variance, h, rng, jitter=1e-8) -> np.ndarray:
    """One joint draw of a zero-mean GP with covariance ``variance * exp(-d^2/h^2)``."""
    n = locs.shape[0]
    if variance == 0:
        return np.zeros(n)
    C = variance * correlation_matrix(locs, locs, h)
    for j in (jitter, 1e-6, 1e-4):
        try:
            L = cholesky(C + j * variance * np.eye(n), lower=True)
            break
        except LinAlgError:
            continue
    else:
        raise NumericalError(f"GP covariance not factorizable for h={h}")
    return L @ rng.standard_normal(n)


def simulate(scenario: Optional[SimScenario] = None):
    """Draw a dataset and its ground truth. Returns ``(SurveyDataset, SimTruth)``."""
    sc = scenario if scenario is not None else default_truth()
    rng = np.random.default_rng(sc.seed)
    n = sc.T * sc.N
    lo, hi = sc.box
    period = np.repeat(np.arange(1, sc.T + 1), sc.N)
    locs = rng.uniform(lo, hi, size=(n, 2))
    u = gp_draw(locs, sc.gp_variance, sc.h_u, rng)
    xi = gp_draw(locs, sc.gp_variance, sc.h_xi, rng)
    p = len(sc.beta)
    X = np.ones((n, p))
    if p > 1:
        X[:, 1:] = rng.normal(0.0, sc.covariate_sd, size=(n, p - 1))
    v = np.asarray(sc.v)[period - 1]
    eta = np.asarray(sc.eta)[period - 1]
    log_lam = X @ np.asarray(sc.beta) + u + v
    zero_mean = X @ np.asarray(sc.gamma) + xi + eta
    z = (zero_mean + rng.standard_normal(n) > 0).astype(np.int8)
    y = np.where(z == 1, 0, rng.poisson(np.exp(log_lam)))
    names = ["intercept"] + [f"x{j}" for j in range(1, p)]
    data = SurveyDataset(period, locs, y, X, T=sc.T, covariate_names=names)
    return data, SimTruth(sc, u, xi, z, log_lam, zero_mean)
