"""Posterior prediction, posterior predictive loss and hold-out error metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .core import ModelKind, SurveyDataset, iter_chunks, mean_and_zero_prob
from .errors import InputError
from .kernels import build_projector
from .sampler import PosteriorDraws

# cap on draws x points held in memory per chunk
_CHUNK_CELLS = 2_000_000


@dataclass
class PredictionGrid:
    """Prediction points: locations, 1-based periods (may exceed the fitted
    horizon) and covariate rows."""

    locs: np.ndarray
    periods: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.locs = np.asarray(self.locs, dtype=float).reshape(-1, 2)
        n = self.locs.shape[0]
        self.periods = np.broadcast_to(np.asarray(self.periods, dtype=np.int64), (n,)).copy()
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = np.broadcast_to(X, (n, X.size)) if n else X.reshape(0, X.size)
        X = np.array(X, dtype=float)
        self.X = X.reshape(n, X.shape[-1] if X.ndim == 2 else -1)
        if n and self.periods.min() < 1:
            raise InputError("prediction periods are 1-based")

    @property
    def n(self) -> int:
        return self.locs.shape[0]

    @classmethod
    def from_dataset(cls, data: SurveyDataset) -> "PredictionGrid":
        return cls(data.locs, data.period, data.X)

    @classmethod
    def lattice(cls, bbox, resolution, period, covariates) -> "PredictionGrid":
        """Regular lattice over ``bbox = (xmin, xmax, ymin, ymax)`` with spacing
        ``resolution``; every node shares ``period`` and the covariate row."""
        if not resolution > 0:
            raise InputError("lattice resolution must be positive")
        xmin, xmax, ymin, ymax = map(float, bbox)
        xs = xmin + resolution * np.arange(int(np.floor((xmax - xmin) / resolution + 1e-9)) + 1)
        ys = ymin + resolution * np.arange(int(np.floor((ymax - ymin) / resolution + 1e-9)) + 1)
        gx, gy = np.meshgrid(xs, ys, indexing="ij")
        locs = np.column_stack([gx.ravel(), gy.ravel()])
        return cls(locs, period, np.asarray(covariates, dtype=float))


@dataclass
class SurfacePrediction:
    mean_count: np.ndarray
    p_zero: np.ndarray
    quantiles: tuple
    count_quantiles: np.ndarray  # (n, len(quantiles))
    p_zero_quantiles: np.ndarray


@dataclass
class PPLResult:
    G: float
    P: float

    @property
    def ppl(self) -> float:
        return self.G + self.P


@dataclass
class ModelScore:
    ppl: float
    mae: float
    mape1: float
    mape2: float
    n_test: int
    n_positive: int
    mape2_defined: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


class _PredictorEngine:
    """Evaluates per-draw linear predictors at arbitrary points, chunk by chunk."""

    def __init__(self, draws: PosteriorDraws, sample_future_walk=False, rng=None, max_period=None):
        self.d = draws
        self.spatial = draws.model_kind is not ModelKind.ZIP
        self.zero_inflated = draws.model_kind is not ModelKind.STP
        self.projectors = {}
        self.future_v = self.future_eta = None
        if sample_future_walk and self.spatial and max_period and max_period > draws.T:
            rng = rng if rng is not None else np.random.default_rng()
            steps = max_period - draws.T
            S = draws.n_draws
            self.future_v = np.cumsum(
                rng.standard_normal((S, steps)) * np.sqrt(draws.sigma2_v)[:, None], axis=1
            )
            if self.zero_inflated:
                self.future_eta = np.cumsum(
                    rng.standard_normal((S, steps)) * np.sqrt(draws.sigma2_eta)[:, None], axis=1
                )

    def _projector(self, l):
        if l not in self.projectors:
            self.projectors[l] = build_projector(self.d.knots, float(self.d.bandwidth_grid[l]))
        return self.projectors[l]

    def _field(self, mu, index, locs):
        out = np.zeros((mu.shape[0], locs.shape[0]))
        for l in np.unique(index):
            rows = index == l
            D = self._projector(int(l)).weights(locs)
            out[rows] = mu[rows] @ D.T
        return out

    def _time(self, path, future, periods):
        T = self.d.T
        idx = np.minimum(periods, T) - 1
        eff = path[:, idx]
        if future is not None:
            ahead = periods - T
            fut = ahead > 0
            if fut.any():
                eff[:, fut] += future[:, ahead[fut] - 1]
        return eff

    def predictors(self, locs, periods, X):
        d = self.d
        if X.shape[1] != d.beta.shape[1]:
            raise InputError(
                f"covariate dimension {X.shape[1]} does not match the fitted {d.beta.shape[1]}"
            )
        log_lam = d.beta @ X.T
        if self.spatial:
            log_lam += self._field(d.mu_u, d.h_u_index, locs)
            log_lam += self._time(d.v, self.future_v, periods)
        if not self.zero_inflated:
            return log_lam, None
        m_g = d.gamma @ X.T
        if self.spatial:
            m_g += self._field(d.mu_xi, d.h_xi_index, locs)
            m_g += self._time(d.eta, self.future_eta, periods)
        return log_lam, m_g

    def moments(self, locs, periods, X):
        log_lam, m_g = self.predictors(locs, periods, X)
        if m_g is None:
            lam = np.exp(log_lam)
            return lam, np.exp(-lam), log_lam, m_g
        mean, p0 = mean_and_zero_prob(log_lam, m_g)
        return mean, p0, log_lam, m_g

    def chunks(self, n):
        size = max(1, _CHUNK_CELLS // max(1, self.d.n_draws))
        return iter_chunks(n, size)


def predict_surfaces(
    draws: PosteriorDraws,
    grid: PredictionGrid,
    quantiles: Sequence[float] = (0.025, 0.975),
    sample_future_walk: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> SurfacePrediction:
    """Posterior mean and quantiles of ``E[y]`` and ``P(y = 0)`` at each grid point.

    Every draw is projected with the knot weights for its own bandwidth.
    Periods past the fitted horizon reuse the last time effect unless
    ``sample_future_walk`` adds random-walk increments per draw.
    """
    eng = _PredictorEngine(
        draws, sample_future_walk, rng, int(grid.periods.max()) if grid.n else None
    )
    q = tuple(float(x) for x in quantiles)
    mean = np.empty(grid.n)
    p0 = np.empty(grid.n)
    cq = np.empty((grid.n, len(q)))
    pq = np.empty((grid.n, len(q)))
    for sl in eng.chunks(grid.n):
        m, z, _, _ = eng.moments(grid.locs[sl], grid.periods[sl], grid.X[sl])
        mean[sl] = m.mean(axis=0)
        p0[sl] = z.mean(axis=0)
        if q:
            cq[sl] = np.quantile(m, q, axis=0).T
            pq[sl] = np.quantile(z, q, axis=0).T
    return SurfacePrediction(mean, p0, q, cq, pq)


def posterior_predictive_loss(
    draws: PosteriorDraws, data: SurveyDataset, rng: Optional[np.random.Generator] = None
) -> PPLResult:
    """Squared-error posterior predictive loss ``G + P``.

    One replicate ``y_rep`` per stored draw: a structural zero with
    probability ``Phi(m_g)``, otherwise ``Poisson(lambda)``. ``G`` is the
    squared distance of the data to the replicate means, ``P`` the summed
    replicate variances.
    """
    if draws.n_draws < 2:
        raise InputError("posterior predictive loss needs at least 2 draws")
    rng = rng if rng is not None else np.random.default_rng(0)
    eng = _PredictorEngine(draws)
    G = 0.0
    P = 0.0
    for sl in eng.chunks(data.n):
        log_lam, m_g = eng.predictors(data.locs[sl], data.period[sl], data.X[sl])
        y_rep = rng.poisson(np.exp(log_lam)).astype(float)
        if m_g is not None:
            y_rep[rng.random(m_g.shape) < ndtr(m_g)] = 0.0
        G += float(np.sum((data.y[sl] - y_rep.mean(axis=0)) ** 2))
        P += float(np.sum(y_rep.var(axis=0, ddof=1)))
    return PPLResult(G, P)


def validation_errors(predictions, test_counts) -> ModelScore:
    """MAE and the two MAPE variants; ``ppl`` is left as NaN."""
    lam = np.asarray(predictions, dtype=float).ravel()
    y = np.asarray(test_counts, dtype=float).ravel()
    if lam.size != y.size:
        raise InputError(f"length mismatch: {lam.size} predictions vs {y.size} counts")
    if y.size == 0:
        raise InputError("empty test set")
    err = np.abs(y - lam)
    pos = y > 0
    n_pos = int(pos.sum())
    return ModelScore(
        ppl=float("nan"),
        mae=float(err.mean()),
        mape1=float(np.mean(err / (y + 1.0))),
        mape2=float(np.mean(err[pos] / y[pos])) if n_pos else 0.0,
        n_test=int(y.size),
        n_positive=n_pos,
        mape2_defined=n_pos > 0,
    )


def point_predict_holdout(
    draws: PosteriorDraws,
    test_data: SurveyDataset,
    plug_in: bool = False,
    sample_future_walk: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Point prediction of each test count.

    Default: posterior mean of ``E[y | params]``. With ``plug_in`` the two
    linear predictors are averaged over draws first and pushed through the
    mean formula once.
    """
    grid = PredictionGrid.from_dataset(test_data)
    if not plug_in:
        return predict_surfaces(draws, grid, quantiles=(), sample_future_walk=sample_future_walk, rng=rng).mean_count
    eng = _PredictorEngine(draws, sample_future_walk, rng, int(grid.periods.max()) if grid.n else None)
    out = np.empty(grid.n)
    for sl in eng.chunks(grid.n):
        log_lam, m_g = eng.predictors(grid.locs[sl], grid.periods[sl], grid.X[sl])
        if m_g is None:
            out[sl] = np.exp(log_lam.mean(axis=0))
        else:
            out[sl] = mean_and_zero_prob(log_lam.mean(axis=0), m_g.mean(axis=0))[0]
    return out


def score_model(draws, train: SurveyDataset, test: SurveyDataset, rng=None, plug_in=False) -> ModelScore:
    """PPL on the training data plus hold-out errors on ``test``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    ppl = posterior_predictive_loss(draws, train, rng).ppl
    score = validation_errors(point_predict_holdout(draws, test, plug_in=plug_in, rng=rng), test.y)
    score.ppl = ppl
    return score
