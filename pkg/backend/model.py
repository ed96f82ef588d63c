"""
Change Model - Geometric change-point prior, observation densities and sampling-right replenishment
All randomness flows through generators derived from a TrajectorySeed
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, List, NamedTuple, Tuple

import numpy as np
from scipy import integrate, stats

from errors import DomainError

_log = logging.getLogger(__name__)

SEED_LIMIT = 2 ** 64
OBSERVATION_BLOCK = 256


@dataclass(frozen=True)
class GeometricPrior:
    """P(Λ = 0) = pi0 and P(Λ = λ) = (1 - pi0) rho (1 - rho)^(λ-1) for λ >= 1"""
    pi0: float
    rho: float

    def __post_init__(self):
        if not 0.0 <= self.pi0 < 1.0:
            raise DomainError(f"pi0 must lie in [0, 1), got {self.pi0}")
        if not 0.0 < self.rho < 1.0:
            raise DomainError(f"rho must lie in (0, 1), got {self.rho}")

    def pmf(self, lam: int) -> float:
        if lam < 0:
            return 0.0
        if lam == 0:
            return self.pi0
        return (1.0 - self.pi0) * self.rho * (1.0 - self.rho) ** (lam - 1)

    def tail(self, k: int) -> float:
        """P(Λ >= k + 1) for k >= 0"""
        return (1.0 - self.pi0) * (1.0 - self.rho) ** k


class DensityPair(ABC):
    """
    Pre/post-change density pair. Solvers only need log densities, a sampler and an
    integration window, so any pair providing those plugs into every policy.
    """

    symmetric: bool = False

    @abstractmethod
    def log_density(self, x, post_change: bool) -> np.ndarray:
        """Log of f1(x) when post_change else f0(x)"""

    @abstractmethod
    def sample_block(self, rng: np.random.Generator, post_mask: np.ndarray) -> np.ndarray:
        """One draw per slot, from f1 where post_mask is set and f0 elsewhere"""

    @abstractmethod
    def support(self, width_sigmas: float) -> Tuple[float, float]:
        """Integration window holding all but a negligible tail of both densities"""

    @abstractmethod
    def describe(self) -> Dict[str, Any]:
        """JSON-ready parameters, inverted by pair_from_description"""

    def log_likelihood_ratio(self, x) -> np.ndarray:
        lf1 = np.asarray(self.log_density(x, True), dtype=float)
        lf0 = np.asarray(self.log_density(x, False), dtype=float)
        if np.any(np.isneginf(lf1) & np.isneginf(lf0)):
            raise DomainError("both densities vanish at the observation")
        return lf1 - lf0


@dataclass(frozen=True)
class GaussianVariancePair(DensityPair):
    """f0 = N(0, sigma2), f1 = N(0, sigma2 + shift)"""
    sigma2: float
    shift: float

    symmetric = True

    def __post_init__(self):
        if not self.sigma2 > 0.0:
            raise DomainError(f"sigma2 must be positive, got {self.sigma2}")
        if not self.shift >= 0.0:
            raise DomainError(f"variance shift must be nonnegative, got {self.shift}")
        for post_change in (False, True):
            mass = self.total_mass(post_change)
            if abs(mass - 1.0) > 1e-6:
                raise DomainError(f"density integrates to {mass}, not 1")

    @property
    def post_variance(self) -> float:
        return self.sigma2 + self.shift

    def std(self, post_change: bool) -> float:
        return math.sqrt(self.post_variance if post_change else self.sigma2)

    def total_mass(self, post_change: bool) -> float:
        mass, _ = integrate.quad(lambda x: math.exp(self.log_density(x, post_change)), -np.inf, np.inf)
        _log.debug("density mass %.12f (post_change=%s)", mass, post_change)
        return mass

    def log_density(self, x, post_change: bool):
        return stats.norm.logpdf(x, loc=0.0, scale=self.std(post_change))

    def log_likelihood_ratio(self, x):
        # closed form keeps tiny shifts exact
        ratio = self.shift / self.sigma2
        x = np.asarray(x, dtype=float)
        return -0.5 * math.log1p(ratio) + 0.5 * x * x * ratio / self.post_variance

    def sample_block(self, rng: np.random.Generator, post_mask: np.ndarray) -> np.ndarray:
        post_mask = np.asarray(post_mask, dtype=bool)
        scales = np.where(post_mask, self.std(True), self.std(False))
        return rng.standard_normal(post_mask.shape[0]) * scales

    def support(self, width_sigmas: float) -> Tuple[float, float]:
        half = width_sigmas * self.std(True)
        return -half, half

    def describe(self) -> Dict[str, Any]:
        return {"kind": "gaussian_variance", "sigma2": self.sigma2, "shift": self.shift}


def pair_from_description(description: Dict[str, Any]) -> DensityPair:
    kind = description.get("kind")
    if kind == "gaussian_variance":
        return GaussianVariancePair(float(description["sigma2"]), float(description["shift"]))
    raise DomainError(f"unknown density kind {kind!r}")


def make_gaussian_pair(sigma2: float, snr_db: float) -> GaussianVariancePair:
    """Variance-shift pair with P = sigma2 * 10^(snr_db / 10)"""
    if not sigma2 > 0.0:
        raise DomainError(f"sigma2 must be positive, got {sigma2}")
    return GaussianVariancePair(sigma2=sigma2, shift=sigma2 * 10.0 ** (snr_db / 10.0))


def kl_divergence(pair: DensityPair) -> float:
    """D(f1 || f0) in nats"""
    if isinstance(pair, GaussianVariancePair):
        ratio = pair.shift / pair.sigma2
        return 0.5 * (ratio - math.log1p(ratio))

    lo, hi = pair.support(12.0)

    def integrand(x):
        lf1 = float(pair.log_density(x, True))
        return math.exp(lf1) * float(pair.log_likelihood_ratio(x))

    value, _ = integrate.quad(integrand, lo, hi, limit=200)
    return max(value, 0.0)


def log_likelihood_ratio(pair: DensityPair, x: float, sampled: bool) -> float:
    """log f1(x)/f0(x) for a sampled slot, 0 for a skipped one"""
    if not sampled:
        return 0.0
    return float(pair.log_likelihood_ratio(x))


@dataclass(frozen=True)
class EnergyModel:
    """Battery of `capacity` sampling rights refilled by i.i.d. arrivals with law `pmf` on {0..V}"""
    capacity: int
    pmf: Tuple[float, ...]
    initial: int = 0

    def __post_init__(self):
        object.__setattr__(self, "pmf", tuple(float(p) for p in self.pmf))
        if int(self.capacity) != self.capacity or self.capacity < 0:
            raise DomainError(f"capacity must be a nonnegative integer, got {self.capacity}")
        if not self.pmf:
            raise DomainError("replenishment pmf is empty")
        if any(p < 0.0 for p in self.pmf):
            raise DomainError(f"replenishment pmf has negative entries: {self.pmf}")
        total = math.fsum(self.pmf)
        if abs(total - 1.0) > 1e-12:
            raise DomainError(f"replenishment pmf sums to {total!r}, not 1")
        if not 0 <= self.initial <= self.capacity:
            raise DomainError(f"initial rights {self.initial} outside 0..{self.capacity}")

    @property
    def max_arrival(self) -> int:
        return len(self.pmf) - 1

    @property
    def p0(self) -> float:
        return self.pmf[0]

    @property
    def probabilities(self) -> np.ndarray:
        return np.asarray(self.pmf, dtype=float)

    @property
    def mean_arrival(self) -> float:
        return math.fsum(i * p for i, p in enumerate(self.pmf))


class TrialGenerators(NamedTuple):
    change: np.random.Generator
    observation: np.random.Generator
    energy: np.random.Generator


@dataclass(frozen=True)
class TrajectorySeed:
    """Counter-based seed: every trial's streams are a pure function of (master_seed, trial_index)"""
    master_seed: int
    trial_index: int

    def __post_init__(self):
        if not 0 <= self.master_seed < SEED_LIMIT:
            raise DomainError(f"master seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if self.trial_index < 0:
            raise DomainError(f"trial index must be nonnegative, got {self.trial_index}")

    def seed_sequence(self) -> np.random.SeedSequence:
        return np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.trial_index,))

    def generators(self) -> TrialGenerators:
        change, observation, energy = self.seed_sequence().spawn(3)
        return TrialGenerators(
            np.random.default_rng(change),
            np.random.default_rng(observation),
            np.random.default_rng(energy),
        )


@dataclass(frozen=True)
class ChangeModel:
    """Change-point prior plus the observation law on either side of it"""
    prior: GeometricPrior
    pair: DensityPair

    @property
    def rho(self) -> float:
        return self.prior.rho

    @property
    def pi0(self) -> float:
        return self.prior.pi0


def draw_change_point(prior: GeometricPrior, rng: np.random.Generator) -> int:
    if rng.random() < prior.pi0:
        return 0
    return int(rng.geometric(prior.rho))


def draw_change_points(prior: GeometricPrior, rng: np.random.Generator, size: int) -> np.ndarray:
    at_zero = rng.random(size) < prior.pi0
    return np.where(at_zero, 0, rng.geometric(prior.rho, size=size))


def sample_change_point(prior: GeometricPrior, seed: TrajectorySeed) -> int:
    return draw_change_point(prior, seed.generators().change)


def sample_observation(pair: DensityPair, post_change: bool, rng: np.random.Generator) -> float:
    return float(pair.sample_block(rng, np.array([post_change]))[0])


def sample_replenishment(energy: EnergyModel, rng: np.random.Generator) -> int:
    return int(rng.choice(len(energy.pmf), p=energy.probabilities))


def draw_replenishments(energy: EnergyModel, rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.choice(len(energy.pmf), size=size, p=energy.probabilities)


class ObservationStream:
    """
    Slot-indexed observations X_1, X_2, ... drawn in fixed blocks, so a policy that skips
    slots sees exactly the values a per-slot policy sees on the same generator.
    """

    def __init__(self, pair: DensityPair, change_point: int, rng: np.random.Generator,
                 block: int = OBSERVATION_BLOCK):
        self.pair = pair
        self.change_point = change_point
        self.rng = rng
        self.block = block
        self._base = 0
        self._values = np.empty(0)
        self._llr = np.empty(0)

    def _advance_to(self, k: int):
        if k < 1:
            raise DomainError(f"observations start at slot 1, got {k}")
        if k <= self._base - len(self._values):
            raise DomainError(f"slot {k} precedes the current observation block")
        while k > self._base:
            slots = np.arange(self._base + 1, self._base + self.block + 1)
            self._values = self.pair.sample_block(self.rng, slots >= self.change_point)
            self._llr = np.asarray(self.pair.log_likelihood_ratio(self._values), dtype=float)
            self._base += self.block

    def at(self, k: int) -> float:
        self._advance_to(k)
        return float(self._values[k - self._base + self.block - 1])

    def llr_at(self, k: int) -> float:
        self._advance_to(k)
        return float(self._llr[k - self._base + self.block - 1])


class ReplenishmentStream:
    """Slot-indexed arrivals ν_1, ν_2, ... drawn in blocks"""

    def __init__(self, energy: EnergyModel, rng: np.random.Generator, block: int = OBSERVATION_BLOCK):
        self.energy = energy
        self.rng = rng
        self.block = block
        self._base = 0
        self._values: List[int] = []

    def at(self, k: int) -> int:
        if k < 1 or k <= self._base - len(self._values):
            raise DomainError(f"slot {k} is not available in the replenishment stream")
        while k > self._base:
            self._values = draw_replenishments(self.energy, self.rng, self.block).tolist()
            self._base += self.block
        return self._values[k - self._base + self.block - 1]
