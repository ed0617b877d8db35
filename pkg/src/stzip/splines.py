"""Truncated-power P-spline basis for a scalar covariate.

A smooth effect ``f(x) = a_0 + a_1 x + ... + a_q x^q + sum_l a_{q+l} (x - k_l)_+^q``
is linear in its coefficients, so it enters the sampler as extra design
columns. Only the ``K`` truncated-power coefficients are shrunk.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, InputError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SplineSpec:
    q: int = 2
    K: int = 9
    knots: Optional[Sequence[float]] = None
    input_range: Optional[tuple] = None

    def __post_init__(self):
        if self.q < 1 or self.K < 1:
            raise ConfigurationError("spline needs q >= 1 and K >= 1")
        knots = self.knots
        if knots is None:
            knots = np.arange(1, self.K + 1) / (self.K + 1)
        knots = np.asarray(knots, dtype=float)
        if knots.size != self.K:
            raise ConfigurationError(f"expected {self.K} spline knots, got {knots.size}")
        if np.any(np.diff(knots) <= 0) or knots[0] <= 0 or knots[-1] >= 1:
            raise ConfigurationError("spline knots must be strictly increasing inside (0, 1)")
        object.__setattr__(self, "knots", knots)
        if self.input_range is not None:
            lo, hi = map(float, self.input_range)
            if not hi > lo:
                raise ConfigurationError(f"degenerate spline input range ({lo}, {hi})")
            object.__setattr__(self, "input_range", (lo, hi))

    @property
    def width(self) -> int:
        return 1 + self.q + self.K

    def fitted_to(self, x_raw) -> "SplineSpec":
        """Copy with the scaling range frozen to the observed span of ``x_raw``."""
        x_raw = np.asarray(x_raw, dtype=float)
        return SplineSpec(self.q, self.K, self.knots, (float(x_raw.min()), float(x_raw.max())))

    def scale(self, x_raw) -> np.ndarray:
        if self.input_range is None:
            raise ConfigurationError("spline input range not set; call fitted_to() on training data")
        lo, hi = self.input_range
        x = (np.asarray(x_raw, dtype=float) - lo) / (hi - lo)
        if np.any((x < 0) | (x > 1)):
            log.warning("spline input outside the training range; clamping to [0, 1]")
        return np.clip(x, 0.0, 1.0)

    def to_dict(self) -> dict:
        out = {"q": self.q, "K": self.K, "knots": [float(k) for k in self.knots]}
        if self.input_range is not None:
            out["input_range"] = list(self.input_range)
        return out


def basis_matrix(spec: SplineSpec, x) -> np.ndarray:
    """Basis rows for already-scaled inputs ``x`` in [0, 1], shape (n, 1 + q + K)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    powers = x[:, None] ** np.arange(spec.q + 1)
    trunc = np.maximum(x[:, None] - spec.knots[None, :], 0.0) ** spec.q
    return np.hstack([powers, trunc])


def basis_row(spec: SplineSpec, x_raw: float) -> np.ndarray:
    return basis_matrix(spec, spec.scale(x_raw))[0]


@dataclass(frozen=True)
class SplineDesign:
    X: np.ndarray
    penalized: np.ndarray  # column indices of the truncated-power coefficients
    spec: SplineSpec


def assemble_design(spec: SplineSpec, raw_covariates, extra_covariates=None) -> SplineDesign:
    """Rows ``(extra covariates, 1, x, ..., x^q, (x - k_1)_+^q, ...)``."""
    raw = np.atleast_1d(np.asarray(raw_covariates, dtype=float))
    if extra_covariates is None:
        extra = np.empty((raw.size, 0))
    else:
        extra = np.asarray(extra_covariates, dtype=float)
        if extra.ndim == 1:
            extra = extra[:, None]
        if extra.shape[0] != raw.size:
            raise InputError(
                f"length mismatch: {raw.size} spline inputs vs {extra.shape[0]} covariate rows"
            )
    if spec.input_range is None:
        spec = spec.fitted_to(raw)
    B = basis_matrix(spec, spec.scale(raw))
    X = np.hstack([extra, B])
    start = extra.shape[1] + 1 + spec.q
    return SplineDesign(X, np.arange(start, start + spec.K), spec)


def evaluate(spec: SplineSpec, coef, x) -> np.ndarray:
    """``f(x)`` for scaled inputs and a coefficient vector of length ``1 + q + K``."""
    return basis_matrix(spec, x) @ np.asarray(coef, dtype=float)
