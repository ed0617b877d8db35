"""Squared-exponential kernel, k-means knots and the predictive-process projector.

A spatial field is represented by its values ``mu`` at ``M`` knots; anywhere
else it is the kriging interpolant ``D(s)' mu`` with ``D(s) = H^{-1} V(s)``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist, pdist

from .errors import ConfigurationError, InputError, NumericalError

log = logging.getLogger(__name__)

JITTER_LADDER = (1e-8, 1e-6, 1e-4)


def _check_bandwidth(h):
    if not np.all(np.asarray(h) > 0):
        raise ConfigurationError(f"bandwidth must be positive, got {h!r}")


def correlation(s1, s2, h) -> np.ndarray:
    """``exp(-||s1 - s2||^2 / h^2)``, broadcasting over leading axes."""
    _check_bandwidth(h)
    d = np.asarray(s1, dtype=float) - np.asarray(s2, dtype=float)
    return np.exp(-np.sum(d * d, axis=-1) / (h * h))


def correlation_matrix(a, b, h) -> np.ndarray:
    _check_bandwidth(h)
    return np.exp(-cdist(np.atleast_2d(a), np.atleast_2d(b), "sqeuclidean") / (h * h))


@dataclass(frozen=True)
class KnotSet:
    knots: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float).reshape(-1, 2)
        if k.shape[0] < 1:
            raise InputError("a knot set needs at least one knot")
        if k.shape[0] > 1 and pdist(k).min() <= 1e-9:
            raise InputError("knots must be pairwise distinct")
        object.__setattr__(self, "knots", k)

    @property
    def M(self) -> int:
        return self.knots.shape[0]

    def median_distance(self) -> float:
        if self.M == 1:
            return 1.0
        return float(np.median(pdist(self.knots)))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["knot_x", "knot_y"])
            for x, y in self.knots:
                w.writerow([f"{x:.17g}", f"{y:.17g}"])

    @classmethod
    def from_csv(cls, path) -> "KnotSet":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or set(rows[0]) != {"knot_x", "knot_y"}:
            raise InputError(f"{path}: expected header knot_x,knot_y")
        return cls(np.array([[float(r["knot_x"]), float(r["knot_y"])] for r in rows]))


def _kmeans_pp(points, M, rng):
    n = points.shape[0]
    centers = np.empty((M, 2))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for k in range(1, M):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers[k] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centers[k]) ** 2, axis=1))
    return centers


def kmeans(points, M, rng, max_iter=100, tol=1e-8):
    """Lloyd's algorithm from a k-means++ start. Returns ``(centers, labels, sse)``."""
    points = np.asarray(points, dtype=float)
    centers = _kmeans_pp(points, M, rng)
    for _ in range(max_iter):
        d2 = cdist(points, centers, "sqeuclidean")
        labels = d2.argmin(axis=1)
        counts = np.bincount(labels, minlength=M)
        new = np.zeros_like(centers)
        np.add.at(new, labels, points)
        empty = counts == 0
        new[~empty] /= counts[~empty, None]
        if empty.any():
            # reseed empty clusters at the points worst served by their center
            worst = np.argsort(-d2[np.arange(points.shape[0]), labels])
            new[empty] = points[worst[: empty.sum()]]
        shift = np.max(np.sqrt(np.sum((new - centers) ** 2, axis=1)))
        centers = new
        if shift < tol:
            break
    d2 = cdist(points, centers, "sqeuclidean")
    labels = d2.argmin(axis=1)
    sse = float(d2[np.arange(points.shape[0]), labels].sum())
    return centers, labels, sse


def select_knots(locations, M: int, seed=0) -> KnotSet:
    """Knots at the ``M`` k-means cluster centres of the observed locations."""
    locations = np.asarray(locations, dtype=float).reshape(-1, 2)
    distinct = np.unique(locations, axis=0)
    if M < 1 or M > distinct.shape[0]:
        raise InputError(f"M={M} must be between 1 and the {distinct.shape[0]} distinct locations")
    if M == distinct.shape[0]:
        return KnotSet(distinct)
    if M == 1:
        return KnotSet(locations.mean(axis=0, keepdims=True))
    rng = np.random.default_rng(seed)
    centers, _, _ = kmeans(locations, M, rng)
    return KnotSet(centers)


@dataclass(frozen=True)
class PredictiveProjector:
    """Kernel matrix at the knots for one bandwidth, factorized once.

    ``H`` is stored with its jitter already on the diagonal, so every
    quantity derived from it (weights, quadratic forms, log-determinant)
    refers to the same matrix.
    """

    knots: KnotSet
    bandwidth: float
    H: np.ndarray
    chol_H: np.ndarray
    log_det_H: float
    jitter: float
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def M(self) -> int:
        return self.knots.M

    def kernel_rows(self, locs) -> np.ndarray:
        """``V(s)`` for each location, shape (n, M)."""
        return correlation_matrix(locs, self.knots.knots, self.bandwidth)

    def weights(self, locs) -> np.ndarray:
        """``D(s)`` for each location, shape (n, M)."""
        V = self.kernel_rows(locs)
        return cho_solve((self.chol_H, True), V.T).T

    def project(self, s) -> np.ndarray:
        return self.weights(np.asarray(s, dtype=float).reshape(1, 2))[0]

    def solve(self, b) -> np.ndarray:
        return cho_solve((self.chol_H, True), b)

    def quad_form(self, mu) -> float:
        """``mu' H^{-1} mu``."""
        w = solve_triangular(self.chol_H, mu, lower=True)
        return float(w @ w)

    def H_inv(self) -> np.ndarray:
        if "H_inv" not in self._cache:
            self._cache["H_inv"] = self.solve(np.eye(self.M))
        return self._cache["H_inv"]


def build_projector(knots: KnotSet, h: float) -> PredictiveProjector:
    _check_bandwidth(h)
    K = correlation_matrix(knots.knots, knots.knots, h)
    last = None
    for jitter in JITTER_LADDER:
        H = K + jitter * np.eye(knots.M)
        try:
            L = cholesky(H, lower=True)
        except LinAlgError as exc:
            last = exc
            log.debug("cholesky failed at jitter %g for h=%g", jitter, h)
            continue
        log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
        return PredictiveProjector(knots, float(h), H, L, log_det, jitter)
    spacing = float(pdist(knots.knots).min()) if knots.M > 1 else float("nan")
    raise NumericalError(
        f"kernel matrix not positive definite for h={h} (min knot spacing {spacing:.3g}): {last}"
    )


def project(projector: PredictiveProjector, s) -> np.ndarray:
    return projector.project(s)


def default_bandwidth_grid(knots: KnotSet, L: int = 10) -> np.ndarray:
    """``L`` log-spaced bandwidths from 0.1x to 2x the median inter-knot distance."""
    med = knots.median_distance()
    return np.geomspace(0.1 * med, 2.0 * med, L)


def save_knots(knots: KnotSet, path):
    knots.to_csv(Path(path))
