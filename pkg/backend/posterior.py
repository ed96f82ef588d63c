"""
Posterior - Recursions for π_k = P(Λ <= k | observations) and the statistics derived from it
Scalar functions serve the simulators; bayes_update is the vectorized form used by the solvers
"""

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import expit

from errors import DomainError
from model import DensityPair

ArrayLike = Union[float, np.ndarray]

# keeps log-odds finite; the stopping test π >= 1 - α is unaffected for α >= 1e-12
MAX_POSTERIOR = 1.0 - 1e-15


def propagate_silent(pi: ArrayLike, rho: float) -> ArrayLike:
    """Φ0(π) = π + (1 - π)ρ, the one-slot update without an observation"""
    return pi + (1.0 - pi) * rho


def silent_tail(pi: ArrayLike, rho: float, m: ArrayLike) -> ArrayLike:
    """1 - Φ0^m(π) = (1 - π)(1 - ρ)^m"""
    return (1.0 - pi) * np.exp(m * math.log1p(-rho))


def _posterior_from_prior(prior: float, llr: float) -> float:
    if prior <= 0.0:
        return 0.0
    if prior >= 1.0:
        return 1.0
    z = math.log(prior) - math.log1p(-prior) + llr
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def bayes_update(prior: ArrayLike, llr: ArrayLike) -> np.ndarray:
    """Posterior odds = prior odds * likelihood ratio, evaluated on log-odds"""
    prior = np.asarray(prior, dtype=float)
    llr = np.asarray(llr, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.log(prior) - np.log1p(-prior) + llr
        post = expit(z)
    post = np.where(prior <= 0.0, 0.0, post)
    return np.where(prior >= 1.0, 1.0, post)


def update_with_observation(pi: float, x: float, pair: DensityPair, rho: float) -> float:
    """Φ0 then Bayes: posterior after one sampled slot"""
    return step_with_llr(pi, rho, float(pair.log_likelihood_ratio(x)))


def step_with_llr(pi: float, rho: float, llr: float) -> float:
    return after_interval_with_llr(pi, rho, 1, llr)


def silent_sum(pi: ArrayLike, rho: float, m: ArrayLike) -> ArrayLike:
    """Σ_{k=0}^{m-1} π_k along silent propagation, m - (1-π)(1-(1-ρ)^m)/ρ"""
    if np.any(np.asarray(m) < 0):
        raise DomainError(f"interval must be nonnegative, got {m}")
    reached = -np.expm1(m * math.log1p(-rho))
    return m - (1.0 - pi) * reached / rho


def after_interval_with_llr(pi: float, rho: float, m: int, llr: float) -> float:
    if m < 1:
        raise DomainError(f"sampling interval must be at least 1, got {m}")
    if pi >= 1.0:
        return 1.0
    prior = 1.0 - (1.0 - pi) * math.exp(m * math.log1p(-rho))
    return _posterior_from_prior(prior, llr)


def posterior_after_interval(pi: float, rho: float, m: int, x: float, pair: DensityPair) -> float:
    """m - 1 silent slots, then one sampled slot carrying observation x"""
    return after_interval_with_llr(pi, rho, m, float(pair.log_likelihood_ratio(x)))


def log_odds(pi: float) -> float:
    pi = min(max(pi, 0.0), MAX_POSTERIOR)
    if pi == 0.0:
        return -math.inf
    return math.log(pi) - math.log1p(-pi)


def initial_log_odds(pi0: float, rho: float) -> float:
    """log(π0/(1-π0) + ρ); the score statistic drops this offset"""
    return math.log(pi0 / (1.0 - pi0) + rho)


@dataclass(frozen=True)
class ScoreState:
    """Cumulative score S_k and the log-odds R_k of the posterior tracked next to it"""
    s: float = 0.0
    r: float = 0.0


def score_step(state: ScoreState, log_lr: float, rho: float) -> ScoreState:
    """S += l + |log(1-ρ)|; R follows the exact log-odds recursion including log(1 + ρ e^{-R})"""
    drift = -math.log1p(-rho)
    s = state.s + log_lr + drift
    r = float(np.logaddexp(state.r, math.log(rho))) + drift + log_lr
    return ScoreState(s=s, r=r)


def shiryaev_roberts_step(r_prev: float, lr: float, rho: float, interval: int) -> float:
    """R_i = (1 + R_{i-1}) L / (1 - ρ)^ς on a sequence subsampled every ς slots"""
    if r_prev < 0.0:
        raise DomainError(f"Shiryaev-Roberts statistic must be nonnegative, got {r_prev}")
    return (1.0 + r_prev) * lr * math.exp(-interval * math.log1p(-rho))


def posterior_from_roberts(r: float, rho: float, interval: int) -> float:
    """π = R / (R + 1/(1 - (1-ρ)^ς))"""
    reach = -math.expm1(interval * math.log1p(-rho))
    return r / (r + 1.0 / reach)


def roberts_from_posterior(pi: float, rho: float, interval: int) -> float:
    reach = -math.expm1(interval * math.log1p(-rho))
    return pi / ((1.0 - pi) * reach)
