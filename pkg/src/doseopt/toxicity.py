"""Time-to-event CRM with the one-parameter power model.

The toxicity probability at level j is ``skeleton_j ** exp(a)`` with a normal
prior on ``a``.  Partially followed patients enter the binomial likelihood
with weight proportional to their observed fraction of the toxicity window.
The posterior mean of ``a`` is a smooth 1-D integral and is computed by
deterministic composite Gauss-Legendre quadrature, so repeated fits are
reproducible without Monte Carlo noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from doseopt.grid import DoseGrid, InputError, NumericalError, closest_level

# Prior variance 1.34 is the usual calibration for a 0.25 target.
DEFAULT_PRIOR_SD = math.sqrt(1.34)

# Integration domain for a; the prior mass outside +-10 sd-units is ~0.
_A_LO, _A_HI = -10.0, 10.0
_N_PANELS, _N_NODES = 16, 24


@dataclass(frozen=True)
class ToxObservation:
    """One patient's toxicity status at a decision time."""

    dose_index: int  # 1-based level
    y_tox: int
    follow_time: float  # weeks followed so far
    window: float  # toxicity observation period T_T, weeks

    def __post_init__(self):
        if self.window <= 0:
            raise InputError("toxicity window must be positive")
        if self.follow_time < 0:
            raise InputError("follow_time must be non-negative")


@dataclass(frozen=True)
class ToxPosterior:
    post_mean_a: float
    post_probs: tuple  # skeleton ** exp(post_mean_a), per level
    n_used: int


def tox_weight(obs: ToxObservation) -> float:
    """Likelihood weight: 1 for an observed toxicity, else the fraction of
    the observation window completed, capped at 1."""
    if obs.y_tox:
        return 1.0
    return min(obs.follow_time / obs.window, 1.0)


def tox_prob(p_j: float, a: float) -> float:
    """Power-model toxicity probability ``p_j ** exp(a)``."""
    if not 0.0 < p_j < 1.0:
        raise InputError("skeleton probability must lie in (0,1)")
    return p_j ** math.exp(a)


def _quad_nodes():
    x, w = np.polynomial.legendre.leggauss(_N_NODES)
    edges = np.linspace(_A_LO, _A_HI, _N_PANELS + 1)
    half = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


_NODES, _WEIGHTS = _quad_nodes()


def tox_log_likelihood(a_grid: np.ndarray, y, w, p_obs) -> np.ndarray:
    """Weighted binomial log likelihood of the power model on a grid of a."""
    expa = np.exp(a_grid)[:, None]  # (G, 1)
    probs = np.power(p_obs[None, :], expa)  # (G, n)
    wp = w[None, :] * probs
    ll = np.where(y[None, :] == 1, np.log(np.maximum(wp, 1e-300)), np.log1p(-np.minimum(wp, 1.0 - 1e-15)))
    return ll.sum(axis=1)


def fit_tox_posterior(data, grid: DoseGrid, prior_sd: float = DEFAULT_PRIOR_SD) -> ToxPosterior:
    """Posterior mean of ``a`` under the weighted likelihood and a

    N(0, prior_sd^2) prior, by composite Gauss-Legendre quadrature on
    [-10, 10].  With no data the symmetric prior gives mean 0 and the
    plug-in probabilities reduce to the skeleton.
    """
    if prior_sd <= 0:
        raise InputError("prior_sd must be positive")
    skel = np.asarray(grid.skeleton)
    if data:
        y = np.array([o.y_tox for o in data], dtype=float)
        w = np.array([tox_weight(o) for o in data], dtype=float)
        p_obs = np.array([skel[o.dose_index - 1] for o in data])
        loglik = tox_log_likelihood(_NODES, y, w, p_obs)
    else:
        loglik = np.zeros_like(_NODES)
    logpost = loglik - 0.5 * (_NODES / prior_sd) ** 2
    if not np.all(np.isfinite(logpost)):
        raise NumericalError(f"non-finite CRM integrand (n={len(data)}, max loglik={np.nanmax(loglik)})")
    dens = np.exp(logpost - logpost.max())
    denom = float(np.sum(_WEIGHTS * dens))
    if denom <= 0 or not math.isfinite(denom):
        raise NumericalError("CRM posterior normalizer underflowed")
    a_hat = float(np.sum(_WEIGHTS * _NODES * dens) / denom)
    post = tuple(float(p ** math.exp(a_hat)) for p in skel)
    return ToxPosterior(post_mean_a=a_hat, post_probs=post, n_used=len(data))


def tox_curve_quantiles(data, grid: DoseGrid, prior_sd: float = DEFAULT_PRIOR_SD, qs=(0.025, 0.975)):
    """Per-level quantiles of the toxicity curve induced by the posterior of
    the power parameter (computed on the quadrature grid)."""
    skel = np.asarray(grid.skeleton)
    if data:
        y = np.array([o.y_tox for o in data], dtype=float)
        w = np.array([tox_weight(o) for o in data], dtype=float)
        p_obs = np.array([skel[o.dose_index - 1] for o in data])
        loglik = tox_log_likelihood(_NODES, y, w, p_obs)
    else:
        loglik = np.zeros_like(_NODES)
    logpost = loglik - 0.5 * (_NODES / prior_sd) ** 2
    dens = np.exp(logpost - logpost.max()) * _WEIGHTS
    order = np.argsort(_NODES)
    cdf = np.cumsum(dens[order])
    cdf /= cdf[-1]
    a_sorted = _NODES[order]
    out = []
    for q in qs:
        a_q = float(np.interp(q, cdf, a_sorted))
        # toxicity is decreasing in a, so invert the quantile for the curve
        out.append([float(p ** math.exp(a_q)) for p in skel])
    return [[row[j] for row in reversed(out)] for j in range(len(skel))]


def next_dose_tox(post: ToxPosterior, p_target: float, highest_tried: int) -> int:
    """Level whose estimated toxicity is closest to the target, never more
    than one level above the highest level tried; ties go to the lower dose."""
    if not 0.0 < p_target < 1.0:
        raise InputError("target toxicity must lie in (0,1)")
    best = closest_level(post.post_probs, p_target)
    return min(best, highest_tried + 1)


def acceptable_set(mtd_level: int, grid: DoseGrid) -> list:
    """All levels at or below the MTD."""
    if not 1 <= mtd_level <= grid.n_levels:
        raise InputError("MTD level outside the grid")
    return list(range(1, mtd_level + 1))
