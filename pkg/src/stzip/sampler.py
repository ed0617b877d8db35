"""Gibbs sampler for the spatio-temporal zero-inflated Poisson model.

The intensity side is made conditionally Gaussian by replacing the Poisson
likelihood with a large-shape negative binomial and augmenting with
Polya-gamma weights ``omega``; the zero-inflation side is a probit model
with latent scores ``g``. Spatial effects are predictive processes on a
shared knot set, time effects are random walks pinned at zero in period 1.

Three model kinds share this machinery:

* ``stzip`` - the full model;
* ``stp``   - no zero inflation (``z == 0`` throughout);
* ``zip``   - no spatial or time effects.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky, solve_triangular
from scipy.special import expit, log_ndtr, ndtr, ndtri

from .core import (
    LatentState,
    ModelKind,
    ModelState,
    PriorConfig,
    SamplerPlan,
    SurveyDataset,
)
from .errors import ConfigurationError, InputError, NumericalError, SamplerError
from .kernels import KnotSet, build_projector, default_bandwidth_grid, select_knots
from .pgaugment import nb_log_kernel, sample_omega

log = logging.getLogger(__name__)

TAIL_SWITCH = 5.0


def _std_normal_above(a, rng):
    """Standard normal draws conditioned on ``W > a`` (elementwise)."""
    a = np.asarray(a, dtype=float)
    out = np.empty_like(a)
    body = a <= TAIL_SWITCH
    if np.any(body):
        u = 1.0 - rng.random(int(body.sum()))
        out[body] = -ndtri(u * ndtr(-a[body]))
    tail = ~body
    if np.any(tail):
        # exponential-proposal rejection sampler for far tails (Robert, 1995)
        at = a[tail]
        alpha = 0.5 * (at + np.sqrt(at * at + 4.0))
        res = np.empty_like(at)
        todo = np.arange(at.size)
        while todo.size:
            x = at[todo] + rng.exponential(1.0 / alpha[todo])
            ok = np.log(1.0 - rng.random(todo.size)) <= -0.5 * (x - alpha[todo]) ** 2
            res[todo[ok]] = x[ok]
            todo = todo[~ok]
        out[tail] = res
    return out


def truncated_normal(mean, positive, rng):
    """Unit-variance normal around ``mean`` truncated to ``(0, inf)`` where
    ``positive`` is true and to ``(-inf, 0]`` elsewhere."""
    mean = np.asarray(mean, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    a = np.where(positive, -mean, mean)
    w = _std_normal_above(a, rng)
    return np.where(positive, mean + w, mean - w)


def draw_gaussian_precision(P, b, rng, jitter_ladder=(0.0, 1e-10, 1e-8, 1e-6)):
    """Draw from ``N(P^{-1} b, P^{-1})`` through a Cholesky factor of ``P``."""
    P = np.atleast_2d(P)
    scale = float(np.mean(np.diag(P)))
    last = None
    for jitter in jitter_ladder:
        try:
            L = cholesky(P + jitter * scale * np.eye(P.shape[0]), lower=True)
            break
        except LinAlgError as exc:
            last = exc
    else:
        raise NumericalError(f"precision matrix not positive definite: {last}")
    mean = cho_solve((L, True), b)
    return mean + solve_triangular(L, rng.standard_normal(b.shape[0]), lower=True, trans="T")


@dataclass
class _Field:
    """Per-bandwidth projector plus its kernel rows at every observation.

    ``V`` is a view into the sampler's stacked (L, n, M) array; the weights
    ``D(s) = H^{-1} V(s)`` are never formed since ``D mu = V (H^{-1} mu)``.
    """

    projector: object
    V: np.ndarray
    VtV: np.ndarray

    def field_values(self, mu):
        return self.V @ self.projector.solve(mu)


class GibbsSampler:
    """Owns one chain: data, cached projectors, the current state and its RNG.

    Each ``update_*`` method redraws one block of :attr:`state` in place from
    its full conditional. :meth:`sweep` applies them in the fixed order.

    ``penalized_beta`` / ``penalized_gamma`` mark spline coefficients that get
    ``N(0, 1/tau_P)`` shrinkage priors instead of the vague block.
    """

    def __init__(
        self,
        data: SurveyDataset,
        prior: PriorConfig,
        kind=ModelKind.STZIP,
        knots: Optional[KnotSet] = None,
        rng: Optional[np.random.Generator] = None,
        penalized_beta: Optional[Sequence[int]] = None,
        penalized_gamma: Optional[Sequence[int]] = None,
        knot_seed=0,
    ):
        self.data = data
        self.prior = prior
        self.kind = ModelKind(kind)
        self.rng = rng if rng is not None else np.random.default_rng()
        self.delta = float(prior.delta)
        self.log_delta = float(np.log(self.delta))

        self.X = data.X
        self.y = data.y
        self.tix = data.tix
        self.T = data.T
        self.n, self.p = data.X.shape
        self.n_t = np.bincount(self.tix, minlength=self.T).astype(float)
        self.kappa = (self.y - self.delta) / 2.0
        self.zero_obs = self.y == 0

        self.pen_beta = np.asarray(penalized_beta if penalized_beta is not None else [], dtype=int)
        self.pen_gamma = np.asarray(penalized_gamma if penalized_gamma is not None else [], dtype=int)
        self._prec_beta0 = self._base_precision(prior.cov_beta(self.p), self.pen_beta)
        self._prec_gamma0 = self._base_precision(prior.cov_gamma(self.p), self.pen_gamma)

        self.spatial = self.kind is not ModelKind.ZIP
        self.zero_inflated = self.kind is not ModelKind.STP
        self.knots = None
        self.grid = np.array([1.0])
        self.fields = []
        if self.spatial:
            if knots is None:
                knots = select_knots(data.locs, prior.M, seed=knot_seed)
            self.knots = knots
            grid = prior.bandwidth_grid
            self.grid = np.asarray(grid if grid is not None else default_bandwidth_grid(knots), float)
            self.log_grid_prior = np.log(prior.grid_weights(self.grid.size))
            self.V_all = np.empty((self.grid.size, self.n, knots.M))
            for l, h in enumerate(self.grid):
                proj = build_projector(knots, float(h))
                self.V_all[l] = proj.kernel_rows(data.locs)
                V = self.V_all[l]
                self.fields.append(_Field(proj, V, V.T @ V))
            # inverse Cholesky factors, so all candidates are scored in batched products
            self.Linv_all = np.stack([
                solve_triangular(f.projector.chol_H, np.eye(knots.M), lower=True) for f in self.fields
            ])
            self.half_logdet = 0.5 * np.array([f.projector.log_det_H for f in self.fields])
        self.M = self.knots.M if self.knots is not None else 0
        self.state = self.initial_state()
        self.u = np.zeros(self.n)
        self.xi = np.zeros(self.n)
        self.i_u = self.i_xi = self.grid.size // 2
        self.n_h_u_proposed = self.n_h_u_accepted = 0
        self._laplace_start = {}
        self._iteration = 0
        self._Z = {}
        if self.spatial:
            self.state.h_u = self.state.h_xi = float(self.grid[self.i_u])
        if self.zero_inflated:
            self.state.latent.g = truncated_normal(np.zeros(self.n), self.state.latent.z == 1, self.rng)

    @staticmethod
    def _base_precision(cov, pen):
        p = cov.shape[0]
        prec = np.zeros((p, p))
        keep = np.setdiff1d(np.arange(p), pen)
        if keep.size:
            prec[np.ix_(keep, keep)] = np.linalg.inv(cov[np.ix_(keep, keep)])
        return prec

    def initial_state(self) -> ModelState:
        z = (self.zero_obs & self.zero_inflated).astype(np.int8)
        return ModelState(
            beta=np.zeros(self.p),
            gamma=np.zeros(self.p),
            mu_u=np.zeros(self.M),
            mu_xi=np.zeros(self.M),
            v=np.zeros(self.T),
            eta=np.zeros(self.T),
            tau_u=1.0,
            tau_xi=1.0,
            sigma2_v=1.0,
            sigma2_eta=1.0,
            h_u=1.0,
            h_xi=1.0,
            latent=LatentState(z=z, g=np.zeros(self.n), omega=np.zeros(self.n)),
        )

    def set_counts(self, y):
        """Swap in new counts for the same design (used by joint-distribution tests)."""
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (self.n,) or np.any(y < 0):
            raise InputError("counts must be non-negative with one entry per observation")
        self.y = y
        self.kappa = (y - self.delta) / 2.0
        self.zero_obs = y == 0

    def set_state(self, state: ModelState):
        """Adopt an externally built state; bandwidths must be grid members."""
        self.state = state
        if self.spatial:
            self.i_u = self._grid_index(state.h_u)
            self.i_xi = self._grid_index(state.h_xi)
        self.refresh_fields()

    def _grid_index(self, h):
        hits = np.flatnonzero(np.isclose(self.grid, h, rtol=1e-12, atol=0.0))
        if hits.size == 0:
            raise ConfigurationError(f"bandwidth {h} is not in the grid")
        return int(hits[0])

    def refresh_fields(self):
        if self.spatial:
            s = self.state
            self.u = self.fields[self.i_u].field_values(s.mu_u)
            self.xi = self.fields[self.i_xi].field_values(s.mu_xi)
        else:
            self.u = np.zeros(self.n)
            self.xi = np.zeros(self.n)

    # ----- linear predictors -------------------------------------------------

    def log_intensity(self) -> np.ndarray:
        s = self.state
        return self.X @ s.beta + self.u + s.v[self.tix]

    def zero_mean(self) -> np.ndarray:
        s = self.state
        return self.X @ s.gamma + self.xi + s.eta[self.tix]

    def _weights(self):
        """Masked PG weights and ``kappa`` terms: only ``z == 0`` rows count."""
        free = self.state.latent.z == 0
        return np.where(free, self.state.latent.omega, 0.0), np.where(free, self.kappa, 0.0)

    # ----- intensity side -----------------------------------------------------

    def update_omega(self):
        lat = self.state.latent
        free = lat.z == 0
        lat.omega[~free] = 0.0
        if not free.any():
            return
        psi = self.log_intensity()[free] - self.log_delta
        lat.omega[free] = sample_omega(self.y[free] + self.delta, psi, self.rng)

    def beta_conditional(self):
        """Precision and linear term of the Gaussian full conditional of beta."""
        s = self.state
        w, k = self._weights()
        prec = self._prec_beta0.copy()
        if self.pen_beta.size:
            prec[self.pen_beta, self.pen_beta] += s.tau_P1
        prec += self.X.T @ (w[:, None] * self.X)
        off = self.u + s.v[self.tix] - self.log_delta
        return prec, self.X.T @ (k - w * off)

    def update_beta(self):
        self.state.beta = draw_gaussian_precision(*self.beta_conditional(), self.rng)

    def v_conditional(self, t):
        """Scalar precision and linear term for ``v_t`` (0-based ``t >= 1``)."""
        s = self.state
        w, k = self._weights()
        sel = self.tix == t
        resid = self.X[sel] @ s.beta + self.u[sel] - self.log_delta
        lin = float(np.sum(k[sel] - w[sel] * resid))
        last = t == self.T - 1
        prec = float(w[sel].sum()) + (1.0 if last else 2.0) / s.sigma2_v
        nb = s.v[t - 1] + (0.0 if last else s.v[t + 1])
        return prec, lin + nb / s.sigma2_v

    def update_v(self):
        s = self.state
        if self.T < 2:
            return
        w, k = self._weights()
        resid = self.X @ s.beta + self.u - self.log_delta
        lin = np.bincount(self.tix, weights=k - w * resid, minlength=self.T)
        wsum = np.bincount(self.tix, weights=w, minlength=self.T)
        z = self.rng.standard_normal(self.T)
        for t in range(1, self.T):
            last = t == self.T - 1
            prec = wsum[t] + (1.0 if last else 2.0) / s.sigma2_v
            nb = s.v[t - 1] + (0.0 if last else s.v[t + 1])
            b = lin[t] + nb / s.sigma2_v
            s.v[t] = b / prec + z[t] / np.sqrt(prec)

    def mu_u_conditional(self):
        """Precision and linear term for the knot values in whitened form.

        Writing ``mu = H a`` gives ``u = V a`` and prior precision ``tau H``
        for ``a``, which avoids forming ``H^{-1}`` for smooth kernels. The
        implied law of ``mu`` is the usual conditional Gaussian.
        """
        s = self.state
        f = self.fields[self.i_u]
        w, k = self._weights()
        B = np.sqrt(w)[:, None] * f.V
        prec = B.T @ B + s.tau_u * f.projector.H
        off = self.X @ s.beta + s.v[self.tix] - self.log_delta
        return prec, f.V.T @ (k - w * off)

    def update_mu_u(self):
        s = self.state
        f = self.fields[self.i_u]
        a = draw_gaussian_precision(*self.mu_u_conditional(), self.rng)
        s.mu_u = f.projector.H @ a
        self.u = f.V @ a

    def _joint_design(self, l):
        if l not in self._Z:
            self._Z[l] = np.hstack([self.X, self.fields[l].V])
        return self._Z[l]

    def _joint_gram(self, l):
        key = ("gram", l)
        if key not in self._Z:
            Z = self._joint_design(l)
            self._Z[key] = Z.T @ Z
        return self._Z[key].copy()

    def beta_mu_u_conditional(self):
        """Joint precision and linear term for ``(beta, a_u)`` with ``mu_u = H a_u``."""
        s = self.state
        f = self.fields[self.i_u]
        w, k = self._weights()
        Z = self._joint_design(self.i_u)
        B = np.sqrt(w)[:, None] * Z
        prec = B.T @ B
        prec[: self.p, : self.p] += self._prec_beta0
        if self.pen_beta.size:
            prec[self.pen_beta, self.pen_beta] += s.tau_P1
        prec[self.p:, self.p:] += s.tau_u * f.projector.H
        return prec, Z.T @ (k - w * (s.v[self.tix] - self.log_delta))

    def update_beta_mu_u(self):
        s = self.state
        f = self.fields[self.i_u]
        draw = draw_gaussian_precision(*self.beta_mu_u_conditional(), self.rng)
        s.beta, a = draw[: self.p], draw[self.p:]
        s.mu_u = f.projector.H @ a
        self.u = f.V @ a

    def _candidate_fields(self, mu):
        """Field values at every observation for each grid bandwidth, (L, n),
        and ``mu' H^{-1} mu`` per candidate."""
        w = self.Linv_all @ mu  # (L, M)
        quad = np.sum(w * w, axis=1)
        coef = np.matmul(self.Linv_all.transpose(0, 2, 1), w[:, :, None])
        vals = np.matmul(self.V_all, coef)[:, :, 0]
        return vals, quad

    def bandwidth_u_logmass(self) -> np.ndarray:
        s = self.state
        free = s.latent.z == 0
        vals, quad = self._candidate_fields(s.mu_u)
        off = (self.X @ s.beta + s.v[self.tix])[free]
        loglik = np.sum(nb_log_kernel(self.y[free], off + vals[:, free], self.delta), axis=1)
        return self.log_grid_prior - self.half_logdet - 0.5 * s.tau_u * quad + loglik

    def update_bandwidth_u(self):
        if self.grid.size > 1:
            self.i_u = self._draw_index(self.bandwidth_u_logmass())
        self.state.h_u = float(self.grid[self.i_u])
        self.u = self.fields[self.i_u].field_values(self.state.mu_u)

    def _collapsed_logmarg(self, l, gram, lin, tau):
        """Log mass of bandwidth ``l`` with the whitened knot values integrated
        out of a Gaussian (pseudo-)likelihood with Gram matrix ``gram``."""
        P = gram + tau * self.fields[l].projector.H
        try:
            c, low = cho_factor(P, lower=True, check_finite=False)
        except LinAlgError:
            return -np.inf
        r = solve_triangular(c, lin, lower=True, check_finite=False)
        logdet = 2.0 * np.sum(np.log(np.diag(c)))
        return self.log_grid_prior[l] + self.half_logdet[l] - 0.5 * logdet + 0.5 * float(r @ r)

    def _u_target(self, l, a, off, y):
        """Log density of ``(h_l, a)`` with omega integrated out (up to a constant)."""
        f = self.fields[l]
        psi = off + self.V_all[l][self._free_u] @ a
        prior = self.half_logdet[l] - 0.5 * self.state.tau_u * float(a @ f.projector.H @ a)
        return self.log_grid_prior[l] + prior + float(np.sum(nb_log_kernel(y, psi, self.delta)))

    def laplace_u(self, l, off, y, max_iter=50, tol=1e-8):
        """Mode and Cholesky factor of the negative Hessian of the whitened
        knot values' conditional at bandwidth ``l``, omega integrated out.

        The conditional is log-concave, so Newton run to ``tol`` lands on the
        unique mode whatever the start; warm starts from the last mode found
        at this bandwidth only save iterations.
        """
        tau = self.state.tau_u
        V = self.V_all[l][self._free_u]
        H = self.fields[l].projector.H
        b = y + self.delta
        a = self._laplace_start.get(l, np.zeros(self.M))

        def objective(a):
            psi = off - self.log_delta + V @ a
            return float(np.sum(y * psi - b * np.logaddexp(0.0, psi))) - 0.5 * tau * float(a @ H @ a)

        cur = objective(a)
        for _ in range(max_iter):
            p = expit(off - self.log_delta + V @ a)
            grad = V.T @ (y - b * p) - tau * (H @ a)
            B = np.sqrt(b * p * (1.0 - p))[:, None] * V
            c = cholesky(B.T @ B + tau * H, lower=True, check_finite=False)
            step = cho_solve((c, True), grad, check_finite=False)
            t = 1.0
            while True:
                trial = objective(a + t * step)
                if trial >= cur or t < 1e-6:
                    break
                t *= 0.5
            a = a + t * step
            cur = trial
            if np.max(np.abs(t * step)) < tol:
                break
        self._laplace_start[l] = a
        p = expit(off - self.log_delta + V @ a)
        B = np.sqrt(b * p * (1.0 - p))[:, None] * V
        return a, cholesky(B.T @ B + tau * H, lower=True, check_finite=False)

    @staticmethod
    def _gauss_logpdf(x, mean, chol_prec):
        r = chol_prec.T @ (x - mean)
        return float(np.sum(np.log(np.diag(chol_prec)))) - 0.5 * float(r @ r)

    def update_bandwidth_u_collapsed(self):
        """Metropolis-Hastings move of ``(h_u, mu_u)`` jointly with omega
        integrated out: a neighbouring grid value is proposed and the knot
        values are drawn from the Laplace approximation at that bandwidth."""
        L = self.grid.size
        if L > 1 and self._iteration % int(self.prior.bandwidth_move_every) == 0:
            s = self.state
            cur = self.i_u
            nb_cur = [j for j in (cur - 1, cur + 1) if 0 <= j < L]
            prop = nb_cur[self.rng.integers(len(nb_cur))]
            nb_prop = sum(1 for j in (prop - 1, prop + 1) if 0 <= j < L)
            z = self.rng.standard_normal(self.M)
            self._free_u = s.latent.z == 0
            y = self.y[self._free_u].astype(float)
            off = (self.X @ s.beta + s.v[self.tix])[self._free_u]
            try:
                m_new, c_new = self.laplace_u(prop, off, y)
                m_old, c_old = self.laplace_u(cur, off, y)
            except LinAlgError:
                log.debug("Laplace factorization failed; bandwidth move rejected")
            else:
                a_new = m_new + solve_triangular(c_new.T, z, lower=False, check_finite=False)
                a_old = self.fields[cur].projector.solve(s.mu_u)
                log_r = (
                    self._u_target(prop, a_new, off, y) - self._u_target(cur, a_old, off, y)
                    + self._gauss_logpdf(a_old, m_old, c_old) - self._gauss_logpdf(a_new, m_new, c_new)
                    + np.log(len(nb_cur)) - np.log(nb_prop)
                )
                self.n_h_u_proposed += 1
                if np.log(self.rng.random()) < log_r:
                    self.n_h_u_accepted += 1
                    self.i_u = prop
                    f = self.fields[prop]
                    s.mu_u = f.projector.H @ a_new
                    self.u = f.V @ a_new
        self.state.h_u = float(self.grid[self.i_u])

    def update_tau_u(self):
        s = self.state
        d = self.prior.d_tau_u
        q = self.fields[self.i_u].projector.quad_form(s.mu_u)
        s.tau_u = self.rng.gamma(d + 0.5 * self.M, 1.0 / (d + 0.5 * q))

    # ----- zero-inflation side -------------------------------------------------

    def z_probability(self) -> np.ndarray:
        """``P(z = 1 | rest)`` with ``g`` and ``omega`` integrated out."""
        m = self.zero_mean()
        lam = np.exp(self.log_intensity())
        logit = log_ndtr(m) - (log_ndtr(-m) - lam)
        return np.where(self.zero_obs, expit(logit), 0.0)

    def update_z(self):
        p1 = self.z_probability()
        lat = self.state.latent
        lat.z = (self.rng.random(self.n) < p1).astype(np.int8)
        # omega is undefined on structural zeros
        lat.omega[lat.z == 1] = 0.0

    def update_g(self):
        lat = self.state.latent
        lat.g = truncated_normal(self.zero_mean(), lat.z == 1, self.rng)

    def gamma_conditional(self):
        s = self.state
        prec = self._prec_gamma0.copy()
        if self.pen_gamma.size:
            prec[self.pen_gamma, self.pen_gamma] += s.tau_P2
        prec += self.X.T @ self.X
        return prec, self.X.T @ (s.latent.g - self.xi - s.eta[self.tix])

    def update_gamma(self):
        self.state.gamma = draw_gaussian_precision(*self.gamma_conditional(), self.rng)

    def update_eta(self):
        s = self.state
        if self.T < 2:
            return
        resid = s.latent.g - self.X @ s.gamma - self.xi
        lin = np.bincount(self.tix, weights=resid, minlength=self.T)
        z = self.rng.standard_normal(self.T)
        for t in range(1, self.T):
            last = t == self.T - 1
            prec = self.n_t[t] + (1.0 if last else 2.0) / s.sigma2_eta
            nb = s.eta[t - 1] + (0.0 if last else s.eta[t + 1])
            b = lin[t] + nb / s.sigma2_eta
            s.eta[t] = b / prec + z[t] / np.sqrt(prec)

    def mu_xi_conditional(self):
        s = self.state
        f = self.fields[self.i_xi]
        prec = f.VtV + s.tau_xi * f.projector.H
        return prec, f.V.T @ (s.latent.g - self.X @ s.gamma - s.eta[self.tix])

    def update_mu_xi(self):
        s = self.state
        f = self.fields[self.i_xi]
        a = draw_gaussian_precision(*self.mu_xi_conditional(), self.rng)
        s.mu_xi = f.projector.H @ a
        self.xi = f.V @ a

    def gamma_mu_xi_conditional(self):
        s = self.state
        f = self.fields[self.i_xi]
        Z = self._joint_design(self.i_xi)
        prec = self._joint_gram(self.i_xi)
        prec[: self.p, : self.p] += self._prec_gamma0
        if self.pen_gamma.size:
            prec[self.pen_gamma, self.pen_gamma] += s.tau_P2
        prec[self.p:, self.p:] += s.tau_xi * f.projector.H
        return prec, Z.T @ (s.latent.g - s.eta[self.tix])

    def update_gamma_mu_xi(self):
        s = self.state
        f = self.fields[self.i_xi]
        draw = draw_gaussian_precision(*self.gamma_mu_xi_conditional(), self.rng)
        s.gamma, a = draw[: self.p], draw[self.p:]
        s.mu_xi = f.projector.H @ a
        self.xi = f.V @ a

    def bandwidth_xi_logmass(self) -> np.ndarray:
        s = self.state
        vals, quad = self._candidate_fields(s.mu_xi)
        r = (s.latent.g - self.X @ s.gamma - s.eta[self.tix])[None, :] - vals
        return self.log_grid_prior - self.half_logdet - 0.5 * s.tau_xi * quad - 0.5 * np.sum(r * r, axis=1)

    def update_bandwidth_xi(self):
        if self.grid.size > 1:
            self.i_xi = self._draw_index(self.bandwidth_xi_logmass())
        self.state.h_xi = float(self.grid[self.i_xi])
        self.xi = self.fields[self.i_xi].field_values(self.state.mu_xi)

    def collapsed_xi_logmass(self) -> np.ndarray:
        """Bandwidth log masses for ``xi`` with the knot values integrated out."""
        s = self.state
        r = s.latent.g - self.X @ s.gamma - s.eta[self.tix]
        lin = r @ self.V_all
        return np.array([
            self._collapsed_logmarg(l, f.VtV, lin[l], s.tau_xi) for l, f in enumerate(self.fields)
        ])

    def update_bandwidth_xi_collapsed(self):
        if self.grid.size > 1:
            self.i_xi = self._draw_index(self.collapsed_xi_logmass())
        self.state.h_xi = float(self.grid[self.i_xi])

    def update_tau_xi(self):
        s = self.state
        d = self.prior.d_tau_xi
        q = self.fields[self.i_xi].projector.quad_form(s.mu_xi)
        s.tau_xi = self.rng.gamma(d + 0.5 * self.M, 1.0 / (d + 0.5 * q))

    # ----- variances -----------------------------------------------------------

    def _walk_variance(self, path, d):
        incr = np.diff(path)
        shape = d + 0.5 * incr.size
        rate = d + 0.5 * float(incr @ incr)
        return rate / self.rng.gamma(shape, 1.0)

    def update_sigma2_v(self):
        self.state.sigma2_v = self._walk_variance(self.state.v, self.prior.d_sigma_v)

    def update_sigma2_eta(self):
        self.state.sigma2_eta = self._walk_variance(self.state.eta, self.prior.d_sigma_eta)

    def update_tau_P(self):
        s = self.state
        d = self.prior.d_tau_P
        if self.pen_beta.size:
            a = s.beta[self.pen_beta]
            s.tau_P1 = self.rng.gamma(d + 0.5 * a.size, 1.0 / (d + 0.5 * float(a @ a)))
        if self.pen_gamma.size and self.zero_inflated:
            a = s.gamma[self.pen_gamma]
            s.tau_P2 = self.rng.gamma(d + 0.5 * a.size, 1.0 / (d + 0.5 * float(a @ a)))

    def update_precisions(self):
        if self.spatial:
            self.update_tau_u()
            if self.zero_inflated:
                self.update_tau_xi()
            self.update_sigma2_v()
            if self.zero_inflated:
                self.update_sigma2_eta()
        self.update_tau_P()

    # ----- driver ----------------------------------------------------------------

    def _draw_index(self, logmass):
        logmass = np.where(np.isfinite(logmass), logmass, -np.inf)
        top = logmass.max()
        if not np.isfinite(top):
            raise NumericalError("every bandwidth candidate has zero posterior mass")
        prob = np.exp(logmass - top)
        prob /= prob.sum()
        return int(np.searchsorted(np.cumsum(prob), self.rng.random() * 1.0, side="right").clip(0, prob.size - 1))

    def blocks(self):
        """Update methods in sweep order for this model kind."""
        collapsed = self.prior.bandwidth_update == "collapsed"
        joint = self.prior.joint_blocks and self.spatial
        order = []
        if self.spatial and collapsed:
            # omega is integrated out of this move and redrawn right after
            order.append(("h_u", self.update_bandwidth_u_collapsed))
        order.append(("omega", self.update_omega))
        if not self.spatial:
            order.append(("beta", self.update_beta))
        else:
            order.append(("v", self.update_v))
            if joint:
                coef_field = [("beta_mu_u", self.update_beta_mu_u)]
            else:
                coef_field = [("beta", self.update_beta), ("mu_u", self.update_mu_u)]
            order += coef_field
            if not collapsed:
                order.append(("h_u", self.update_bandwidth_u))
            order.append(("tau_u", self.update_tau_u))
        if self.zero_inflated:
            order += [("z", self.update_z), ("g", self.update_g)]
            if not self.spatial:
                order.append(("gamma", self.update_gamma))
            else:
                order.append(("eta", self.update_eta))
                if joint:
                    coef_field = [("gamma_mu_xi", self.update_gamma_mu_xi)]
                else:
                    coef_field = [("gamma", self.update_gamma), ("mu_xi", self.update_mu_xi)]
                if collapsed:
                    order += [("h_xi", self.update_bandwidth_xi_collapsed)] + coef_field
                else:
                    order += coef_field + [("h_xi", self.update_bandwidth_xi)]
                order.append(("tau_xi", self.update_tau_xi))
        if self.spatial:
            order.append(("sigma2_v", self.update_sigma2_v))
            if self.zero_inflated:
                order.append(("sigma2_eta", self.update_sigma2_eta))
        if self.pen_beta.size or self.pen_gamma.size:
            order.append(("tau_P", self.update_tau_P))
        return order

    def sweep(self, iteration=0):
        self._iteration = iteration
        for name, update in self._blocks:
            try:
                update()
            except (NumericalError, LinAlgError, FloatingPointError) as exc:
                raise SamplerError(iteration, name, exc) from exc
        self.state.check_invariants(self.y)

    @property
    def _blocks(self):
        if not hasattr(self, "_block_cache"):
            self._block_cache = self.blocks()
        return self._block_cache


@dataclass
class PosteriorDraws:
    """Thinned post-burn-in draws, one row per stored iteration.

    Bandwidths are stored as grid indices; ``bandwidth_grid`` maps them back.
    Blocks a model kind does not have are ``None``.
    """

    model_kind: ModelKind
    beta: np.ndarray
    covariate_names: list
    T: int
    delta: float
    bandwidth_grid: np.ndarray
    knots: Optional[KnotSet] = None
    gamma: Optional[np.ndarray] = None
    mu_u: Optional[np.ndarray] = None
    mu_xi: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    eta: Optional[np.ndarray] = None
    tau_u: Optional[np.ndarray] = None
    tau_xi: Optional[np.ndarray] = None
    sigma2_v: Optional[np.ndarray] = None
    sigma2_eta: Optional[np.ndarray] = None
    h_u_index: Optional[np.ndarray] = None
    h_xi_index: Optional[np.ndarray] = None
    tau_P1: Optional[np.ndarray] = None
    tau_P2: Optional[np.ndarray] = None
    log_lambda: Optional[np.ndarray] = None
    zero_mean: Optional[np.ndarray] = None
    penalized_beta: list = field(default_factory=list)
    penalized_gamma: list = field(default_factory=list)
    # Metropolis acceptance rates by block (Gibbs blocks accept always)
    acceptance: dict = field(default_factory=dict)

    ARRAY_FIELDS = (
        "beta", "gamma", "mu_u", "mu_xi", "v", "eta", "tau_u", "tau_xi", "sigma2_v",
        "sigma2_eta", "h_u_index", "h_xi_index", "tau_P1", "tau_P2", "log_lambda", "zero_mean",
    )

    def __post_init__(self):
        self.model_kind = ModelKind(self.model_kind)

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    @property
    def h_u(self):
        return None if self.h_u_index is None else self.bandwidth_grid[self.h_u_index]

    @property
    def h_xi(self):
        return None if self.h_xi_index is None else self.bandwidth_grid[self.h_xi_index]

    def columns(self, include_knot_values=True):
        """Ordered mapping of scalar column name to its draw vector."""
        cols = {}
        names = self.covariate_names
        for j, nm in enumerate(names):
            cols[f"beta[{nm}]"] = self.beta[:, j]
        if self.gamma is not None:
            for j, nm in enumerate(names):
                cols[f"gamma[{nm}]"] = self.gamma[:, j]
        for blk in ("v", "eta"):
            arr = getattr(self, blk)
            if arr is not None:
                for t in range(arr.shape[1]):
                    cols[f"{blk}[{t + 1}]"] = arr[:, t]
        for blk in ("tau_u", "tau_xi", "sigma2_v", "sigma2_eta", "tau_P1", "tau_P2"):
            arr = getattr(self, blk)
            if arr is not None:
                cols[blk] = arr
        if self.h_u_index is not None:
            cols["h_u"] = self.h_u
        if self.h_xi_index is not None:
            cols["h_xi"] = self.h_xi
        if include_knot_values:
            for blk in ("mu_u", "mu_xi"):
                arr = getattr(self, blk)
                if arr is not None:
                    for k in range(arr.shape[1]):
                        cols[f"{blk}[{k + 1}]"] = arr[:, k]
        return cols

    def summary(self, include_knot_values=False) -> dict:
        out = {}
        for name, col in self.columns(include_knot_values).items():
            col = np.asarray(col, dtype=float)
            q = np.quantile(col, [0.025, 0.975])
            out[name] = {
                "mean": float(col.mean()),
                "sd": float(col.std(ddof=1)) if col.size > 1 else 0.0,
                "q025": float(q[0]),
                "q975": float(q[1]),
            }
        return out

    def subset(self, rows) -> "PosteriorDraws":
        kw = {}
        for name in self.ARRAY_FIELDS:
            arr = getattr(self, name)
            kw[name] = None if arr is None else arr[rows]
        return PosteriorDraws(
            model_kind=self.model_kind, covariate_names=self.covariate_names, T=self.T,
            delta=self.delta, bandwidth_grid=self.bandwidth_grid, knots=self.knots,
            penalized_beta=self.penalized_beta, penalized_gamma=self.penalized_gamma, **kw,
        )

    @classmethod
    def concatenate(cls, parts: Sequence["PosteriorDraws"]) -> "PosteriorDraws":
        first = parts[0]
        kw = {}
        for name in cls.ARRAY_FIELDS:
            arrs = [getattr(p, name) for p in parts]
            kw[name] = None if arrs[0] is None else np.concatenate(arrs, axis=0)
        return cls(
            model_kind=first.model_kind, covariate_names=first.covariate_names, T=first.T,
            delta=first.delta, bandwidth_grid=first.bandwidth_grid, knots=first.knots,
            penalized_beta=first.penalized_beta, penalized_gamma=first.penalized_gamma, **kw,
        )


class _Recorder:
    def __init__(self, sampler: GibbsSampler, n_store: int, store_fitted: bool):
        self.s = sampler
        self.k = 0
        S = n_store
        sp, zi = sampler.spatial, sampler.zero_inflated
        self.arrays = {"beta": np.empty((S, sampler.p))}
        if zi:
            self.arrays["gamma"] = np.empty((S, sampler.p))
        if sp:
            self.arrays.update(
                mu_u=np.empty((S, sampler.M)), v=np.empty((S, sampler.T)), tau_u=np.empty(S),
                sigma2_v=np.empty(S), h_u_index=np.empty(S, dtype=np.int64),
            )
            if zi:
                self.arrays.update(
                    mu_xi=np.empty((S, sampler.M)), eta=np.empty((S, sampler.T)),
                    tau_xi=np.empty(S), sigma2_eta=np.empty(S),
                    h_xi_index=np.empty(S, dtype=np.int64),
                )
        if sampler.pen_beta.size:
            self.arrays["tau_P1"] = np.empty(S)
        if sampler.pen_gamma.size and zi:
            self.arrays["tau_P2"] = np.empty(S)
        if store_fitted:
            self.arrays["log_lambda"] = np.empty((S, sampler.n))
            if zi:
                self.arrays["zero_mean"] = np.empty((S, sampler.n))

    def record(self):
        s, st, k = self.s, self.s.state, self.k
        for name, arr in self.arrays.items():
            if name == "h_u_index":
                arr[k] = s.i_u
            elif name == "h_xi_index":
                arr[k] = s.i_xi
            elif name == "log_lambda":
                arr[k] = s.log_intensity()
            elif name == "zero_mean":
                arr[k] = s.zero_mean()
            else:
                arr[k] = getattr(st, name)
        self.k += 1

    def finish(self) -> PosteriorDraws:
        s = self.s
        return PosteriorDraws(
            model_kind=s.kind,
            covariate_names=list(s.data.covariate_names),
            T=s.T,
            delta=s.delta,
            bandwidth_grid=s.grid,
            knots=s.knots,
            penalized_beta=[int(i) for i in s.pen_beta],
            penalized_gamma=[int(i) for i in s.pen_gamma],
            acceptance=(
                {"h_u": s.n_h_u_accepted / s.n_h_u_proposed} if s.n_h_u_proposed else {}
            ),
            **self.arrays,
        )


def chain_seeds(seed):
    """Split a master seed into (knot-selection seed, chain generator)."""
    knot_ss, chain_ss = np.random.SeedSequence(seed).spawn(2)
    return int(knot_ss.generate_state(1)[0]), np.random.default_rng(chain_ss)


def run_chain(
    data: SurveyDataset,
    prior: PriorConfig,
    plan: Optional[SamplerPlan] = None,
    knots: Optional[KnotSet] = None,
    penalized_beta=None,
    penalized_gamma=None,
    progress=None,
) -> PosteriorDraws:
    """Run one chain and return its thinned post-burn-in draws.

    Deterministic given ``plan.seed``. ``progress``, if given, is called as
    ``progress(iteration, sampler)`` after every sweep.
    """
    plan = plan if plan is not None else prior.mcmc
    knot_seed, rng = chain_seeds(plan.seed)
    sampler = GibbsSampler(
        data, prior, plan.model_kind, knots=knots, rng=rng,
        penalized_beta=penalized_beta, penalized_gamma=penalized_gamma, knot_seed=knot_seed,
    )
    rec = _Recorder(sampler, plan.n_stored, plan.store_fitted)
    for it in range(plan.iterations):
        sampler.sweep(it)
        if it >= plan.burn_in and (it - plan.burn_in) % plan.thin == 0 and rec.k < plan.n_stored:
            rec.record()
        if progress is not None:
            progress(it, sampler)
    return rec.finish()


def run_chain_stp(data, prior, plan=None, **kw) -> PosteriorDraws:
    plan = plan if plan is not None else prior.mcmc
    return run_chain(data, prior, _with_kind(plan, ModelKind.STP), **kw)


def run_chain_zip(data, prior, plan=None, **kw) -> PosteriorDraws:
    plan = plan if plan is not None else prior.mcmc
    return run_chain(data, prior, _with_kind(plan, ModelKind.ZIP), **kw)


def _with_kind(plan: SamplerPlan, kind) -> SamplerPlan:
    return SamplerPlan(kind, plan.iterations, plan.burn_in, plan.thin, plan.seed, plan.store_fitted)
