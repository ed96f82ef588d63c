"""
Baselines and Bounds - Classic Shiryaev and uniform-sampling detectors plus the first-order
delay bounds they are compared against. Logarithms are natural throughout.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from errors import ConvergenceError, DomainError, SimulationCapError
from limited_policy import (
    DEFAULT_STEP_CAP,
    DetectionOutcome,
    DetectionPolicy,
    PolicyGrid,
    ValueRow,
    extract_threshold,
)
from model import ChangeModel, DensityPair, EnergyModel, ObservationStream, TrajectorySeed, draw_change_point
from posterior import after_interval_with_llr, propagate_silent
from quadrature import ExpectationOperator, QuadratureConfig

_log = logging.getLogger(__name__)

# absorbs rounding when a ratio of logarithms lands on an integer
CEIL_SLACK = 1e-12


def _check_alpha(alpha: float):
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")


class UniformSamplingPolicy(DetectionPolicy):
    """Sample at ς, 2ς, ...; stop at the first sampling epoch with π >= 1 - α"""

    name = "uniform"

    def __init__(self, interval: int, alpha: float):
        if interval < 1:
            raise DomainError(f"sampling interval must be at least 1, got {interval}")
        _check_alpha(alpha)
        self.interval = int(interval)
        self.alpha = alpha

    @property
    def param(self) -> float:
        return self.alpha

    def run(self, model: ChangeModel, seed: TrajectorySeed, energy: Optional[EnergyModel] = None,
            step_cap: int = DEFAULT_STEP_CAP, record_trace: bool = False) -> DetectionOutcome:
        rho, s = model.rho, self.interval
        reach = -math.expm1(s * math.log1p(-rho))
        gens = seed.generators()
        change_point = draw_change_point(model.prior, gens.change)
        stream = ObservationStream(model.pair, change_point, gens.observation)

        threshold = 1.0 - self.alpha
        k, pi, delay_sum = 0, model.pi0, 0.0
        sample_times: List[int] = []
        while pi < threshold:
            delay_sum += s - (1.0 - pi) * reach / rho
            k += s
            if k > step_cap:
                raise SimulationCapError(step_cap)
            pi = after_interval_with_llr(pi, rho, s, stream.llr_at(k))
            sample_times.append(k)
        return DetectionOutcome(tau=k, change_point=change_point, samples_used=len(sample_times),
                                sample_times=tuple(sample_times), final_posterior=pi,
                                posterior_sum=delay_sum)


class ShiryaevPolicy(UniformSamplingPolicy):
    """Observe every slot; the unconstrained benchmark"""

    name = "shiryaev"

    def __init__(self, rho: float, pair: DensityPair, alpha: float):
        super().__init__(1, alpha)
        self.rho = rho
        self.pair = pair

    def run(self, model: ChangeModel, seed: TrajectorySeed, energy: Optional[EnergyModel] = None,
            step_cap: int = DEFAULT_STEP_CAP, record_trace: bool = False) -> DetectionOutcome:
        if model.rho != self.rho or model.pair != self.pair:
            raise DomainError("Shiryaev detector built for a different change model")
        return super().run(model, seed, energy, step_cap, record_trace)


def shiryaev_policy(rho: float, pair: DensityPair, alpha: float) -> ShiryaevPolicy:
    return ShiryaevPolicy(rho, pair, alpha)


def uniform_sampling_policy(interval: int, alpha: float) -> UniformSamplingPolicy:
    return UniformSamplingPolicy(interval, alpha)


def shiryaev_value_function(rho: float, c: float, pair: DensityPair, grid: Optional[PolicyGrid] = None,
                            quadrature: Optional[QuadratureConfig] = None, tol: float = 1e-9,
                            max_iters: int = 10_000,
                            operator: Optional[ExpectationOperator] = None) -> ValueRow:
    """V(π) = min{1 - π, cπ + E[V(π')]} with an observation every slot, by value iteration"""
    grid = grid or PolicyGrid()
    points = grid.points
    if operator is None:
        operator = ExpectationOperator(pair, points, quadrature)
    prior_next = propagate_silent(points, rho)
    stop = 1.0 - points
    values = stop.copy()
    change = math.inf
    for iteration in range(1, max_iters + 1):
        cont = c * points + grid.interpolate(operator.apply(values), prior_next)
        updated = np.minimum(stop, cont)
        change = float(np.max(np.abs(updated - values)))
        values = updated
        if change < tol:
            _log.debug("Shiryaev value iteration converged after %d sweeps", iteration)
            go_on = cont < stop
            return ValueRow(values=values, intervals=go_on.astype(int),
                            threshold=extract_threshold(points, values))
    raise ConvergenceError("Shiryaev value iteration did not converge", achieved_tol=change,
                           iterations=max_iters)


@dataclass(frozen=True)
class BoundInputs:
    alpha: float
    kl: float
    rho: float
    interval: int = 1
    ptilde: float = 1.0

    def __post_init__(self):
        _check_alpha(self.alpha)
        if self.kl < 0.0:
            raise DomainError(f"KL divergence must be nonnegative, got {self.kl}")
        if not 0.0 < self.rho < 1.0:
            raise DomainError(f"rho must lie in (0, 1), got {self.rho}")
        if self.interval < 1:
            raise DomainError(f"sampling interval must be at least 1, got {self.interval}")
        if not 0.0 <= self.ptilde <= 1.0:
            raise DomainError(f"sampling fraction must lie in [0, 1], got {self.ptilde}")


def _prior_rate(rho: float) -> float:
    return -math.log1p(-rho)


def min_rights_for_interval(alpha: float, rho: float, interval: int) -> int:
    """Smallest N with N >= |ln α| / (|ln(1-ρ)| ς)"""
    _check_alpha(alpha)
    return max(1, math.ceil(abs(math.log(alpha)) / (_prior_rate(rho) * interval) - CEIL_SLACK))


def min_rights_for_interval_base10(alpha: float, rho: float, interval: int) -> int:
    """Same bound with log10; a ratio of logs, so it agrees with the natural one"""
    _check_alpha(alpha)
    ratio = abs(math.log10(alpha)) / (abs(math.log10(1.0 - rho)) * interval)
    return max(1, math.ceil(ratio - CEIL_SLACK))


def interval_for_rights(alpha: float, rho: float, rights: int) -> int:
    """Smallest ς with N ς >= |ln α| / |ln(1-ρ)|"""
    _check_alpha(alpha)
    if rights < 1:
        raise DomainError(f"need at least one sampling right, got {rights}")
    return max(1, math.ceil(abs(math.log(alpha)) / (_prior_rate(rho) * rights) - CEIL_SLACK))


def _check_rate(denominator: float):
    if not denominator > 0.0:
        raise DomainError("detection rate must be positive")


def lower_bound_add(alpha: float, kl: float, rho: float) -> float:
    """|ln α| / (D + |ln(1-ρ)|), leading term"""
    _check_alpha(alpha)
    denominator = kl + _prior_rate(rho)
    _check_rate(denominator)
    return abs(math.log(alpha)) / denominator


def upper_bound_add(alpha: float, kl: float, rho: float, interval: int) -> float:
    """|ln α| ς / (D + |ln(1-ρ)| ς), leading term of uniform sampling every ς slots"""
    _check_alpha(alpha)
    denominator = kl + _prior_rate(rho) * interval
    _check_rate(denominator)
    return abs(math.log(alpha)) * interval / denominator


def greedy_asymptotic_add(alpha: float, ptilde: float, kl: float, rho: float) -> float:
    """|ln α| / q_d with q_d = p̃ D + |ln(1-ρ)|"""
    _check_alpha(alpha)
    denominator = ptilde * kl + _prior_rate(rho)
    _check_rate(denominator)
    return abs(math.log(alpha)) / denominator


def prior_only_add(alpha: float, rho: float) -> float:
    """|ln α| / |ln(1-ρ)|, what waiting without observations achieves"""
    _check_alpha(alpha)
    return abs(math.log(alpha)) / _prior_rate(rho)


def bound_report(inputs: BoundInputs) -> Dict[str, float]:
    return {
        "alpha": inputs.alpha,
        "lower": lower_bound_add(inputs.alpha, inputs.kl, inputs.rho),
        "upper": upper_bound_add(inputs.alpha, inputs.kl, inputs.rho, inputs.interval),
        "greedy": greedy_asymptotic_add(inputs.alpha, inputs.ptilde, inputs.kl, inputs.rho),
        "prior_only": prior_only_add(inputs.alpha, inputs.rho),
        "min_rights": min_rights_for_interval(inputs.alpha, inputs.rho, inputs.interval),
        "min_rights_log10": min_rights_for_interval_base10(inputs.alpha, inputs.rho, inputs.interval),
    }
