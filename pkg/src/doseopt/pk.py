"""Dose-exposure model: Bayesian linear regression of log(AUC) on log(dose).

The residual scale sigma carries a Beta prior on (0,1), reflecting
between-patient variability of clearance, so the conditional update for
sigma is non-conjugate: beta is drawn from its conjugate normal conditional
and sigma from a reflecting random-walk Metropolis step confined to (0,1).
The exposure-defined MTD is the level whose posterior probability of the AUC
exceeding a known threshold is closest to the toxicity target.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy.special import ndtr

from doseopt.grid import DoseGrid, InputError, NumericalError, closest_level

MEAN_CLEARANCE = 19.6  # L/h, population mean used for the default prior


@dataclass(frozen=True)
class PkObservation:
    dose_index: int  # 1-based level
    auc: float  # mg*h/L

    def __post_init__(self):
        if self.auc <= 0:
            raise InputError("AUC must be positive")

    @property
    def v(self) -> float:
        return math.log(self.auc)


@dataclass(frozen=True)
class PkPrior:
    """beta | sigma ~ N2(m, sigma^2 G), sigma ~ Beta(a, b)."""

    m: tuple = (-math.log(MEAN_CLEARANCE), 1.0)
    g_diag: tuple = (1000.0, 1000.0)
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise InputError("Beta prior constants must be positive")
        if any(g <= 0 for g in self.g_diag):
            raise InputError("prior covariance diagonal must be positive")


@dataclass(frozen=True)
class PkPosterior:
    beta0: np.ndarray
    beta1: np.ndarray
    sigma: np.ndarray

    @property
    def n_draws(self) -> int:
        return len(self.sigma)


@njit(cache=True)
def _pk_gibbs(x, v, m0, m1, g0, g1, a, b, n_iter, burn, seed):
    """Gibbs chain for (beta, sigma).  x = log dose, v = log AUC."""
    np.random.seed(seed)
    n = x.shape[0]
    sxx = 0.0
    sx = 0.0
    sxy = 0.0
    sy = 0.0
    for i in range(n):
        sxx += x[i] * x[i]
        sx += x[i]
        sxy += x[i] * v[i]
        sy += v[i]

    keep = n_iter - burn
    out_b0 = np.empty(keep)
    out_b1 = np.empty(keep)
    out_s = np.empty(keep)

    sigma = 0.5
    b0 = m0
    b1 = m1
    step = 0.2
    acc = 0
    tries = 0
    for it in range(n_iter):
        # beta | sigma: precision = G^-1 + X'X, mean = prec^-1 (G^-1 m + X'v)
        p00 = 1.0 / g0 + n
        p01 = sx
        p11 = 1.0 / g1 + sxx
        r0 = m0 / g0 + sy
        r1 = m1 / g1 + sxy
        det = p00 * p11 - p01 * p01
        c00 = p11 / det
        c01 = -p01 / det
        c11 = p00 / det
        mu0 = c00 * r0 + c01 * r1
        mu1 = c01 * r0 + c11 * r1
        # Cholesky of sigma^2 * C
        l00 = math.sqrt(c00)
        l10 = c01 / l00
        l11 = math.sqrt(c11 - l10 * l10)
        z0 = np.random.normal()
        z1 = np.random.normal()
        b0 = mu0 + sigma * l00 * z0
        b1 = mu1 + sigma * (l10 * z0 + l11 * z1)

        # sigma | beta via reflecting random walk on (0,1)
        ssr = 0.0
        for i in range(n):
            r = v[i] - b0 - b1 * x[i]
            ssr += r * r
        q = (b0 - m0) ** 2 / g0 + (b1 - m1) ** 2 / g1

        def logp(s):
            return (
                (a - 1.0) * math.log(s)
                + (b - 1.0) * math.log(1.0 - s)
                - (n + 2.0) * math.log(s)
                - 0.5 * (ssr + q) / (s * s)
            )

        prop = sigma + step * np.random.normal()
        for _ in range(64):
            if prop < 0.0:
                prop = -prop
            elif prop > 1.0:
                prop = 2.0 - prop
            else:
                break
        if 0.0 < prop < 1.0:
            tries += 1
            if math.log(np.random.random()) < logp(prop) - logp(sigma):
                sigma = prop
                acc += 1
        if it < burn and (it + 1) % 50 == 0 and tries > 0:
            rate = acc / tries
            step *= math.exp(1.5 * (rate - 0.35))
            step = min(max(step, 1e-3), 0.8)
            acc = 0
            tries = 0
        if it >= burn:
            out_b0[it - burn] = b0
            out_b1[it - burn] = b1
            out_s[it - burn] = sigma
    return out_b0, out_b1, out_s


def fit_pk_posterior(
    data,
    grid: DoseGrid,
    prior: PkPrior = PkPrior(),
    n_draws: int = 4000,
    burn_in: int = 1000,
    seed: int = 0,
) -> PkPosterior:
    """Joint posterior draws of (beta0, beta1, sigma).

    With no data the chain reproduces the prior.  A single represented dose
    level leaves the slope prior-dominated; that is allowed but warned about.
    """
    if data:
        x = np.array([math.log(grid.dosage[o.dose_index - 1]) for o in data])
        v = np.array([o.v for o in data])
        if len({o.dose_index for o in data}) < 2:
            warnings.warn("PK data covers a single dose level; slope is prior-dominated")
    else:
        x = np.empty(0)
        v = np.empty(0)
    b0, b1, s = _pk_gibbs(
        x,
        v,
        prior.m[0],
        prior.m[1],
        prior.g_diag[0],
        prior.g_diag[1],
        prior.a,
        prior.b,
        n_draws + burn_in,
        burn_in,
        seed & 0x7FFFFFFF,
    )
    if not (np.all(np.isfinite(b0)) and np.all(np.isfinite(b1)) and np.all(np.isfinite(s))):
        raise NumericalError("PK sampler produced non-finite draws")
    return PkPosterior(beta0=b0, beta1=b1, sigma=s)


def pk_exceed_prob(post: PkPosterior, dose_index: int, grid: DoseGrid, threshold: float) -> float:
    """Posterior-averaged P(AUC > threshold) at a dose level."""
    if threshold <= 0:
        raise InputError("threshold must be positive")
    logd = math.log(grid.dosage[dose_index - 1])
    zvals = (math.log(threshold) - post.beta0 - post.beta1 * logd) / post.sigma
    return float(ndtr(-zvals).mean())


def mtd_pk(post: PkPosterior, grid: DoseGrid, threshold: float, p_target: float) -> int:
    """Level whose exceedance probability is closest to the toxicity target."""
    probs = [pk_exceed_prob(post, j, grid, threshold) for j in grid.levels()]
    return closest_level(probs, p_target)


def adjust_mtd(mtd_tox: int, mtd_pk_level: int) -> int:
    """Exposure-adjusted MTD: the more conservative of the two estimates."""
    return min(mtd_tox, mtd_pk_level)
