"""Negative-binomial surrogate for the Poisson likelihood and Polya-gamma moments.

With ``eps ~ Ga(delta, delta)`` mixed into the Poisson rate the count
likelihood becomes negative binomial, which Polya-gamma augmentation turns
into a Gaussian likelihood for the log intensity. The shapes here are always
``y + delta`` with ``delta`` large, so ``PG(b, c)`` is sampled through its
normal approximation.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy.special import gammaln

from .errors import ConfigurationError

log = logging.getLogger(__name__)

SERIES_CUTOFF = 1e-4
REGIME_MIN_SHAPE = 1e3

_warned_regime = False


def nb_surrogate_logpmf(y, lam, delta):
    """Log mass of the negative-binomial surrogate with mean ``lam`` and shape ``delta``."""
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ConfigurationError("lambda must be positive")
    if delta <= 0:
        raise ConfigurationError("delta must be positive")
    r = lam / delta
    return (
        gammaln(y + delta) - gammaln(delta) - gammaln(y + 1.0)
        + y * np.log(r) - (y + delta) * np.log1p(r)
    )


def nb_log_kernel(y, log_lam, delta):
    """``y log(lam/delta) - (y + delta) log(1 + lam/delta)``, the parameter-dependent part."""
    psi = np.asarray(log_lam, dtype=float) - np.log(delta)
    return y * psi - (y + delta) * np.logaddexp(0.0, psi)


def pg_moments(b, c):
    """Mean and variance of ``PG(b, c)``.

    Both are even in ``c``; below ``|c| < 1e-4`` a fourth-order Taylor series
    replaces the closed forms, which cancel badly near zero.
    """
    b = np.asarray(b, dtype=float)
    if np.any(b <= 0):
        raise ConfigurationError("Polya-gamma shape must be positive")
    c = np.abs(np.asarray(c, dtype=float))
    b, c = np.broadcast_arrays(b, c)
    small = c < SERIES_CUTOFF
    mean = np.empty(b.shape)
    var = np.empty(b.shape)
    if np.any(small):
        bs, c2 = b[small], c[small] ** 2
        mean[small] = bs / 4.0 - bs * c2 / 48.0 + bs * c2 * c2 / 480.0
        var[small] = bs / 24.0 - bs * c2 / 120.0 + 17.0 * bs * c2 * c2 / 13440.0
    big = ~small
    if np.any(big):
        bb, cc = b[big], c[big]
        mean[big] = bb / (2.0 * cc) * np.tanh(cc / 2.0)
        var[big] = bb / (4.0 * cc**3) * _sech2_sinh_minus(cc)
    if mean.ndim == 0:
        return float(mean), float(var)
    return mean, var


def _sech2_sinh_minus(c):
    """``sech^2(c/2) (sinh c - c)`` for ``c > 0`` without cancellation or overflow."""
    out = np.empty_like(c)
    lo = c < 1.0
    if np.any(lo):
        x = c[lo]
        x2 = x * x
        # sinh x - x = sum_{k>=1} x^(2k+1) / (2k+1)!
        term = x * x2 / 6.0
        acc = term.copy()
        for k in range(2, 12):
            term = term * x2 / ((2 * k) * (2 * k + 1))
            acc += term
        out[lo] = acc / np.cosh(x / 2.0) ** 2
    hi = ~lo
    if np.any(hi):
        x = c[hi]
        e = np.exp(-x)
        out[hi] = 2.0 * (1.0 - e * e - 2.0 * x * e) / (1.0 + e) ** 2
    return out


def _warn_regime(b):
    global _warned_regime
    if not _warned_regime and np.any(np.asarray(b) < REGIME_MIN_SHAPE):
        log.warning(
            "Polya-gamma shape below %g: the normal approximation is not reliable here",
            REGIME_MIN_SHAPE,
        )
        _warned_regime = True


def sample_omega(b, c, rng: np.random.Generator):
    """Draw ``PG(b, c)`` through ``N(mean, var)``, kept strictly positive."""
    _warn_regime(b)
    mean, var = pg_moments(b, c)
    mean = np.atleast_1d(mean)
    sd = np.sqrt(np.atleast_1d(var))
    out = mean + sd * rng.standard_normal(mean.shape)
    bad = out <= 0
    for _ in range(10):
        if not bad.any():
            break
        out[bad] = mean[bad] + sd[bad] * rng.standard_normal(int(bad.sum()))
        bad = out <= 0
    if bad.any():
        out[bad] = mean[bad] / 1e6
    if np.ndim(b) == 0 and np.ndim(c) == 0:
        return float(out[0])
    return out


def kappa_psi(y, delta, lin_pred):
    """``kappa = (y - delta) / 2`` and ``psi = lin_pred - log(delta)``."""
    y = np.asarray(y, dtype=float)
    kappa = (y - delta) / 2.0
    psi = np.asarray(lin_pred, dtype=float) - np.log(delta)
    if kappa.ndim == 0 and psi.ndim == 0:
        return float(kappa), float(psi)
    return kappa, psi
