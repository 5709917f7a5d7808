"""Plateau dose-efficacy model with sparse group selection over categorical
covariates.

The response probability is ``exp(-exp(a0)) * (1 - exp(-exp(a1 + z.g) * p))``,
a non-decreasing curve in the scaled dose ``p`` with a shared plateau.
Characteristic- and level-inclusion indicators follow a nested Bernoulli
hierarchy and each coefficient has a spike at zero and a (possibly truncated)
Gaussian slab.  Sampling is Metropolis-within-Gibbs: random-walk updates for
the plateau/rate parameters and active coefficients, an exact Gibbs flip for
unconstrained characteristic indicators, and birth/death moves that propose
coefficients straight from the slab so the proposal density cancels the
prior and acceptance reduces to likelihood ratio times prior odds.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit

from doseopt.covariates import GAUSSIAN, TRUNC_NEG, TRUNC_POS, CovariateSchema
from doseopt.grid import InputError, NumericalError

ALPHA_PRIOR_SD = math.sqrt(5.0)

_SLAB_CODE = {GAUSSIAN: 0, TRUNC_POS: 1, TRUNC_NEG: 2}


class ConditioningError(RuntimeError):
    """No posterior draws satisfy the requested inclusion conditioning."""


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 3
    n_iter: int = 2000
    burn_in: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.burn_in >= self.n_iter:
            raise InputError("burn_in must be below n_iter")


@dataclass(frozen=True)
class EffObservation:
    """One patient's response status at a decision time."""

    dose_index: int
    z: np.ndarray  # dummy-coded indicators, at most one per characteristic
    y_eff: int
    follow_time: float
    window: float

    def __post_init__(self):
        if self.window <= 0:
            raise InputError("efficacy window must be positive")
        if self.follow_time < 0:
            raise InputError("follow_time must be non-negative")


def eff_weight(obs: EffObservation) -> float:
    """1 for an observed response, else the completed fraction of the
    response window, capped at 1."""
    if obs.y_eff:
        return 1.0
    return min(obs.follow_time / obs.window, 1.0)


def eff_prob(alpha0, alpha1, gamma, p_j, z):
    """Response probability; broadcasts over posterior draws.

    ``gamma`` has shape (..., M) and ``z`` shape (M,).
    """
    lin = alpha1 + np.asarray(gamma) @ np.asarray(z, dtype=float) if np.size(z) else alpha1
    plateau = np.exp(-np.exp(np.clip(alpha0, -30.0, 30.0)))
    rate = np.exp(np.clip(lin, -30.0, 30.0))
    return plateau * (-np.expm1(-rate * p_j))


@dataclass(frozen=True)
class EffPosterior:
    alpha0: np.ndarray
    alpha1: np.ndarray
    gamma: np.ndarray  # (draws, M)
    eta: np.ndarray  # (draws, M) int8, eta = xi * nu
    xi: np.ndarray  # (draws, H) int8
    nu: np.ndarray  # (draws, M) int8
    scaled_doses: np.ndarray  # p-tilde per level, as used in the fit
    indicator_names: tuple
    n_chains: int
    burn_in: int

    @property
    def n_draws(self) -> int:
        return len(self.alpha0)

    @property
    def inclusion_probs(self) -> np.ndarray:
        if self.eta.shape[1] == 0:
            return np.zeros(0)
        return self.eta.mean(axis=0)

    def prob_draws(self, dose_index: int, z, idx=None) -> np.ndarray:
        """Per-draw response probability at a level, optionally on a subset."""
        sel = slice(None) if idx is None else idx
        return eff_prob(
            self.alpha0[sel],
            self.alpha1[sel],
            self.gamma[sel],
            float(self.scaled_doses[dose_index - 1]),
            z,
        )


@njit(cache=True, inline="always", fastmath=True)
def _row_term(plateau, bi, yi, wi):
    wp = wi * plateau * bi
    if yi == 1:
        if wp < 1e-300:
            wp = 1e-300
        return math.log(wp)
    if wp > 1.0 - 1e-12:
        wp = 1.0 - 1e-12
    return math.log1p(-wp)


@njit(cache=True, fastmath=True)
def _loglik_rows(plateau, b, y, w):
    total = 0.0
    for i in range(y.shape[0]):
        total += _row_term(plateau, b[i], y[i], w[i])
    return total


@njit(cache=True, fastmath=True)
def _bsgs_chain(
    y, w, p, Z, row_off, row_idx, row_val, char_of, slab_kind, tau, q_char, q_level,
    alpha_sd, n_iter, burn, seed,
):
    np.random.seed(seed)
    n = y.shape[0]
    M = Z.shape[1]
    H = q_char.shape[0]

    alpha0 = 0.0
    alpha1 = 0.0
    xi = np.ones(H, dtype=np.int8)
    nu = np.ones(M, dtype=np.int8)
    gamma = np.zeros(M)

    lp = np.zeros(n)
    b = np.empty(n)  # 1 - exp(-exp(alpha1 + lp_i) * p_i)
    for i in range(n):
        b[i] = -math.expm1(-math.exp(min(max(alpha1 + lp[i], -30.0), 30.0)) * p[i])
    plateau = math.exp(-math.exp(min(max(alpha0, -30.0), 30.0)))
    cur_ll = _loglik_rows(plateau, b, y, w)

    b_new = np.empty(n)
    step_a0 = 0.5
    step_a1 = 0.5
    step_g = np.full(M, 0.5)
    acc_a0 = 0
    acc_a1 = 0
    acc_g = np.zeros(M, dtype=np.int64)
    try_g = np.zeros(M, dtype=np.int64)

    keep = n_iter - burn
    out_a0 = np.empty(keep)
    out_a1 = np.empty(keep)
    out_g = np.empty((keep, M))
    out_eta = np.empty((keep, M), dtype=np.int8)
    out_xi = np.empty((keep, H), dtype=np.int8)
    out_nu = np.empty((keep, M), dtype=np.int8)

    for it in range(n_iter):
        # plateau parameter: b is unchanged, only the multiplier moves
        prop = alpha0 + step_a0 * np.random.normal()
        plateau_p = math.exp(-math.exp(min(max(prop, -30.0), 30.0)))
        ll_p = _loglik_rows(plateau_p, b, y, w)
        log_a = ll_p - cur_ll - 0.5 * (prop * prop - alpha0 * alpha0) / (alpha_sd * alpha_sd)
        if math.log(np.random.random()) < log_a:
            alpha0 = prop
            plateau = plateau_p
            cur_ll = ll_p
            acc_a0 += 1

        # rate intercept
        prop = alpha1 + step_a1 * np.random.normal()
        for i in range(n):
            b_new[i] = -math.expm1(-math.exp(min(max(prop + lp[i], -30.0), 30.0)) * p[i])
        ll_p = _loglik_rows(plateau, b_new, y, w)
        log_a = ll_p - cur_ll - 0.5 * (prop * prop - alpha1 * alpha1) / (alpha_sd * alpha_sd)
        if math.log(np.random.random()) < log_a:
            alpha1 = prop
            for i in range(n):
                b[i] = b_new[i]
            cur_ll = ll_p
            acc_a1 += 1

        # characteristic indicators: exact flip when no level is active
        for h in range(H):
            any_on = False
            for m in range(M):
                if char_of[m] == h and nu[m] == 1:
                    any_on = True
                    break
            if any_on:
                xi[h] = 1
            else:
                p_on = q_char[h]
                for m in range(M):
                    if char_of[m] == h:
                        p_on *= 1.0 - q_level[m]
                p_off = 1.0 - q_char[h]
                xi[h] = 1 if np.random.random() < p_on / (p_on + p_off) else 0

        # level indicators: birth from the slab / death to the spike
        for m in range(M):
            if xi[char_of[m]] == 0:
                continue
            if nu[m] == 0:
                g_new = tau[m] * np.random.normal()
                if slab_kind[m] == 1:
                    g_new = abs(g_new)
                elif slab_kind[m] == 2:
                    g_new = -abs(g_new)
                delta = g_new
            else:
                delta = -gamma[m]
            ll_p = cur_ll
            for k in range(row_off[m], row_off[m + 1]):
                i = row_idx[k]
                bi = -math.expm1(
                    -math.exp(min(max(alpha1 + lp[i] + row_val[k] * delta, -30.0), 30.0)) * p[i]
                )
                ll_p += _row_term(plateau, bi, y[i], w[i]) - _row_term(plateau, b[i], y[i], w[i])
            odds = q_level[m] / (1.0 - q_level[m])
            log_a = ll_p - cur_ll + (math.log(odds) if nu[m] == 0 else -math.log(odds))
            if math.log(np.random.random()) < log_a:
                if nu[m] == 0:
                    nu[m] = 1
                    gamma[m] = delta
                else:
                    nu[m] = 0
                    gamma[m] = 0.0
                for k in range(row_off[m], row_off[m + 1]):
                    i = row_idx[k]
                    lp[i] += row_val[k] * delta
                    b[i] = -math.expm1(
                        -math.exp(min(max(alpha1 + lp[i], -30.0), 30.0)) * p[i]
                    )
                cur_ll = ll_p

        # random-walk refresh of the active coefficients
        for m in range(M):
            if nu[m] == 0 or xi[char_of[m]] == 0:
                continue
            try_g[m] += 1
            g_new = gamma[m] + step_g[m] * np.random.normal()
            if slab_kind[m] == 1 and g_new < 0.0:
                continue
            if slab_kind[m] == 2 and g_new > 0.0:
                continue
            delta = g_new - gamma[m]
            ll_p = cur_ll
            for k in range(row_off[m], row_off[m + 1]):
                i = row_idx[k]
                bi = -math.expm1(
                    -math.exp(min(max(alpha1 + lp[i] + row_val[k] * delta, -30.0), 30.0)) * p[i]
                )
                ll_p += _row_term(plateau, bi, y[i], w[i]) - _row_term(plateau, b[i], y[i], w[i])
            log_a = ll_p - cur_ll - 0.5 * (g_new * g_new - gamma[m] * gamma[m]) / (tau[m] * tau[m])
            if math.log(np.random.random()) < log_a:
                gamma[m] = g_new
                for k in range(row_off[m], row_off[m + 1]):
                    i = row_idx[k]
                    lp[i] += row_val[k] * delta
                    b[i] = -math.expm1(
                        -math.exp(min(max(alpha1 + lp[i], -30.0), 30.0)) * p[i]
                    )
                cur_ll = ll_p
                acc_g[m] += 1

        # adapt proposal scales toward ~30% acceptance, frozen after burn-in
        if it < burn and (it + 1) % 50 == 0:
            step_a0 *= math.exp(1.2 * (acc_a0 / 50.0 - 0.3))
            step_a1 *= math.exp(1.2 * (acc_a1 / 50.0 - 0.3))
            step_a0 = min(max(step_a0, 0.01), 5.0)
            step_a1 = min(max(step_a1, 0.01), 5.0)
            acc_a0 = 0
            acc_a1 = 0
            for m in range(M):
                if try_g[m] >= 10:
                    step_g[m] *= math.exp(1.2 * (acc_g[m] / try_g[m] - 0.3))
                    step_g[m] = min(max(step_g[m], 0.01), 5.0)
                acc_g[m] = 0
                try_g[m] = 0

        if it >= burn:
            k = it - burn
            out_a0[k] = alpha0
            out_a1[k] = alpha1
            for m in range(M):
                out_g[k, m] = gamma[m]
                e = xi[char_of[m]] * nu[m]
                out_eta[k, m] = e
                out_nu[k, m] = nu[m]
            for h in range(H):
                out_xi[k, h] = xi[h]
    return out_a0, out_a1, out_g, out_eta, out_xi, out_nu


def fit_eff_posterior(
    data,
    schema: CovariateSchema,
    grid_scaled,
    mcmc: SamplerConfig = SamplerConfig(),
) -> EffPosterior:
    """Posterior draws for the plateau model with sparse group selection.

    ``grid_scaled`` holds the scaled dose per level; callers pass either the
    prior skeleton or toxicity-updated posterior probabilities.  Chains are
    seeded independently and merged after burn-in.
    """
    scaled = np.asarray(grid_scaled, dtype=float)
    if not len(data):
        raise InputError("need at least one observation")
    if np.any((scaled <= 0) | (scaled >= 1)):
        raise InputError("scaled doses must lie in (0,1)")

    meta = schema.indicator_meta()
    M = schema.n_indicators
    n = len(data)
    y = np.array([int(o.y_eff) for o in data], dtype=np.int8)
    w = np.array([eff_weight(o) for o in data])
    p = np.array([scaled[o.dose_index - 1] for o in data])
    Z = np.zeros((n, M))
    for i, o in enumerate(data):
        zi = np.asarray(o.z, dtype=float)
        if zi.shape != (M,):
            raise InputError(f"indicator vector of length {zi.size}, expected {M}")
        Z[i] = zi

    chars = {}
    char_of = np.zeros(M, dtype=np.int64)
    slab_kind = np.zeros(M, dtype=np.int64)
    tau = np.zeros(M)
    q_level = np.zeros(M)
    for m, (h, c, level) in enumerate(meta):
        chars[h] = c
        char_of[m] = h
        slab_kind[m] = _SLAB_CODE[c.slab_kind(level)]
        tau[m] = c.slab_sd
        q_level[m] = c.q_level
    q_char = np.array([chars[h].q_char for h in sorted(chars)]) if chars else np.zeros(0)

    # CSR layout of the nonzero indicator entries, one segment per column
    row_off = np.zeros(M + 1, dtype=np.int64)
    idx_parts = []
    val_parts = []
    for m in range(M):
        nz = np.flatnonzero(Z[:, m])
        row_off[m + 1] = row_off[m] + len(nz)
        idx_parts.append(nz.astype(np.int64))
        val_parts.append(Z[nz, m])
    row_idx = np.concatenate(idx_parts) if idx_parts else np.zeros(0, dtype=np.int64)
    row_val = np.concatenate(val_parts) if val_parts else np.zeros(0)

    pieces = []
    for chain in range(mcmc.n_chains):
        seed = (mcmc.seed * 1_000_003 + 7919 * chain + 1) & 0x7FFFFFFF
        pieces.append(
            _bsgs_chain(
                y, w, p, Z, row_off, row_idx, row_val, char_of, slab_kind, tau, q_char,
                q_level, ALPHA_PRIOR_SD, mcmc.n_iter, mcmc.burn_in, seed,
            )
        )
    a0 = np.concatenate([pc[0] for pc in pieces])
    a1 = np.concatenate([pc[1] for pc in pieces])
    g = np.concatenate([pc[2] for pc in pieces])
    eta = np.concatenate([pc[3] for pc in pieces])
    xi = np.concatenate([pc[4] for pc in pieces])
    nu = np.concatenate([pc[5] for pc in pieces])
    if not (np.all(np.isfinite(a0)) and np.all(np.isfinite(a1)) and np.all(np.isfinite(g))):
        raise NumericalError("efficacy sampler produced non-finite draws")
    return EffPosterior(
        alpha0=a0,
        alpha1=a1,
        gamma=g,
        eta=eta,
        xi=xi,
        nu=nu,
        scaled_doses=scaled,
        indicator_names=tuple(schema.indicator_names()),
        n_chains=mcmc.n_chains,
        burn_in=mcmc.burn_in,
    )


def select_covariates(post: EffPosterior, threshold: float) -> set:
    """Indicator indices whose posterior inclusion probability is strictly
    above the threshold."""
    if not 0.0 < threshold < 1.0:
        raise InputError("selection threshold must lie in (0,1)")
    probs = post.inclusion_probs
    return {int(i) for i in np.flatnonzero(probs > threshold)}


MIN_CONDITIONAL_DRAWS = 50


def eff_draws_conditional(post: EffPosterior, z, dose_index: int, condition_on=()) -> np.ndarray:
    """Response-probability draws at a level, restricted to draws where every
    conditioned indicator is included.  Falls back to all draws (with a
    warning) below 50 qualifying draws; zero qualifying draws is an error.
    """
    condition_on = sorted(condition_on)
    if not condition_on:
        return post.prob_draws(dose_index, z)
    mask = np.all(post.eta[:, condition_on] == 1, axis=1)
    n_hit = int(mask.sum())
    if n_hit == 0:
        raise ConditioningError(f"no draws include indicators {condition_on}")
    if n_hit < MIN_CONDITIONAL_DRAWS:
        warnings.warn(
            f"only {n_hit} draws include indicators {condition_on}; using all draws"
        )
        return post.prob_draws(dose_index, z)
    return post.prob_draws(dose_index, z, idx=mask)
