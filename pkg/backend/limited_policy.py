"""
Limited Policy - Optimal detection with N sampling rights
Offline: value iteration V_0, V_1, ..., V_N over a posterior grid (operator 𝒢).
Online: wait the stored interval, sample, update, and stop once π crosses the row threshold.
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from errors import DomainError, SimulationCapError
from model import ChangeModel, DensityPair, EnergyModel, ObservationStream, TrajectorySeed, draw_change_point
from posterior import after_interval_with_llr, silent_sum, silent_tail
from quadrature import ExpectationOperator, QuadratureConfig

_log = logging.getLogger(__name__)

DEFAULT_STEP_CAP = 10_000_000
THRESHOLD_TOL = 1e-9
INTERVAL_CHUNK = 256
# costs this close count as a tie
INTERVAL_TIE_TOL = 1e-12


@dataclass(frozen=True)
class PolicyGrid:
    """Uniform grid 0 = p_0 < ... < p_{G-1} = 1 on the posterior"""
    resolution: int = 2001

    def __post_init__(self):
        if self.resolution < 3:
            raise DomainError(f"grid needs at least 3 points, got {self.resolution}")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.resolution)

    @property
    def step(self) -> float:
        return 1.0 / (self.resolution - 1)

    def nearest_index(self, pi: float) -> int:
        return int(min(max(round(pi * (self.resolution - 1)), 0), self.resolution - 1))

    def locate(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Left cell index and fractional position for linear interpolation"""
        scaled = np.clip(np.asarray(x, dtype=float), 0.0, 1.0) * (self.resolution - 1)
        idx = np.clip(np.floor(scaled).astype(int), 0, self.resolution - 2)
        return idx, scaled - idx

    def interpolate(self, values: np.ndarray, x) -> np.ndarray:
        """Piecewise-linear values at x; extra trailing axes of values are carried along"""
        idx, frac = self.locate(x)
        if values.ndim > 1:
            frac = frac.reshape(frac.shape + (1,) * (values.ndim - 1))
        return values[idx] * (1.0 - frac) + values[idx + 1] * frac


@dataclass
class ValueRow:
    values: np.ndarray
    intervals: np.ndarray
    threshold: float


@dataclass
class LimitedPolicyTable:
    """rows[n] is the value function with n rights remaining"""
    rows: List[ValueRow]
    rho: float
    c: float
    pair: DensityPair
    grid: PolicyGrid
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)

    @property
    def rights(self) -> int:
        return len(self.rows) - 1

    def value(self, pi: float, remaining: Optional[int] = None) -> float:
        """J(π, n) by interpolation, n defaulting to every right"""
        row = self.rows[self.rights if remaining is None else remaining]
        return float(np.interp(pi, self.grid.points, row.values))

    def thresholds(self) -> List[float]:
        """π^U_n for n = 0..N samples used"""
        return [self.rows[self.rights - n].threshold for n in range(self.rights + 1)]

    def audit(self) -> Dict[str, float]:
        """Largest violation of each structural property of the solved rows"""
        points = self.grid.points
        report = {"concavity": 0.0, "above_stop": 0.0, "at_one": 0.0, "dominance": 0.0, "crossings": 0.0}
        for n, row in enumerate(self.rows):
            v = row.values
            bend = 0.5 * (v[:-2] + v[2:]) - v[1:-1]
            report["concavity"] = max(report["concavity"], float(bend.max(initial=0.0)))
            report["above_stop"] = max(report["above_stop"], float(np.max(v - (1.0 - points))))
            report["at_one"] = max(report["at_one"], abs(float(v[-1])))
            if n > 0:
                report["dominance"] = max(report["dominance"], float(np.max(v - self.rows[n - 1].values)))
            stop = (1.0 - points) - v <= THRESHOLD_TOL
            report["crossings"] = max(report["crossings"], float(np.count_nonzero(np.diff(stop.astype(int)))))
        return report


@dataclass(frozen=True)
class DetectionOutcome:
    """One simulated trajectory; posterior_sum is Σ_{k<τ} π_k"""
    tau: int
    change_point: int
    samples_used: int
    sample_times: Tuple[int, ...]
    final_posterior: float
    posterior_sum: float
    # (ν_k, μ_k, N_k) per slot when recorded
    trace: Tuple[Tuple[int, int, int], ...] = ()

    @property
    def false_alarm(self) -> bool:
        return self.tau < self.change_point

    @property
    def delay_plus(self) -> int:
        return max(self.tau - self.change_point, 0)

    def loss(self, c: float) -> float:
        """c (τ - Λ)^+ + 1{τ < Λ}"""
        return c * self.delay_plus + float(self.false_alarm)

    def posterior_loss(self, c: float) -> float:
        """1 - π_τ + c Σ_{k<τ} π_k, equal to loss(c) in expectation"""
        return 1.0 - self.final_posterior + c * self.posterior_sum


class DetectionPolicy(ABC):
    """A sampling rule plus a stopping rule, simulated one trajectory at a time"""

    name: str = "policy"

    @property
    @abstractmethod
    def param(self) -> float:
        """Sweep coordinate reported next to the estimates"""

    @property
    def cost(self) -> Optional[float]:
        return None

    @abstractmethod
    def run(self, model: ChangeModel, seed: TrajectorySeed, energy: Optional[EnergyModel] = None,
            step_cap: int = DEFAULT_STEP_CAP, record_trace: bool = False) -> DetectionOutcome:
        """Simulate one trajectory"""


def m_search_cap(rho: float, c: float) -> int:
    """Beyond this wait c Σπ_k alone exceeds any possible saving"""
    return int(math.ceil(1.0 / c + 1.0 / rho)) + 1


def _minimize_over_intervals(cost_fn: Callable[[np.ndarray], np.ndarray], size: int,
                             m_lo: int, m_hi: int) -> Tuple[np.ndarray, np.ndarray]:
    """Running min/argmin over m in [m_lo, m_hi]; near-ties go to the shorter wait"""
    best = np.full(size, np.inf)
    best_m = np.zeros(size, dtype=int)
    rows = np.arange(size)
    for start in range(m_lo, m_hi + 1, INTERVAL_CHUNK):
        ms = np.arange(start, min(start + INTERVAL_CHUNK, m_hi + 1))
        costs = cost_fn(ms)
        j = np.argmax(costs <= costs.min(axis=1)[:, None] + INTERVAL_TIE_TOL, axis=1)
        vals = costs[rows, j]
        better = vals < best - INTERVAL_TIE_TOL
        best = np.where(better, vals, best)
        best_m = np.where(better, ms[j], best_m)
    return best, best_m


def prior_only_costs(pi: np.ndarray, rho: float, c: float, ms: np.ndarray) -> np.ndarray:
    """c Σ_{k<m} π_k + (1 - π_m) for a wait of m silent slots then a stop"""
    pi = np.asarray(pi, dtype=float)[:, None]
    ms = np.asarray(ms)[None, :]
    return c * silent_sum(pi, rho, ms) + silent_tail(pi, rho, ms)


def v0_values(pi: np.ndarray, rho: float, c: float) -> Tuple[np.ndarray, np.ndarray]:
    pi = np.asarray(pi, dtype=float)
    return _minimize_over_intervals(lambda ms: prior_only_costs(pi, rho, c, ms), len(pi),
                                    0, m_search_cap(rho, c))


def extract_threshold(points: np.ndarray, values: np.ndarray, tol: float = THRESHOLD_TOL) -> float:
    """Least π with 1 - π = V(π): first grid hit, refined on the interpolant"""
    gap = (1.0 - points) - values
    hits = np.flatnonzero(gap <= tol)
    if len(hits) == 0:
        raise DomainError("value row never meets the stopping cost")
    i = int(hits[0])
    if i == 0:
        return 0.0

    def excess(p: float) -> float:
        return (1.0 - p) - float(np.interp(p, points, values)) - tol

    return float(brentq(excess, points[i - 1], points[i], xtol=1e-14))


def v0_row(grid: PolicyGrid, rho: float, c: float) -> ValueRow:
    """No rights left: the best deterministic wait before stopping"""
    if not c > 0.0:
        raise DomainError(f"delay cost must be positive, got {c}")
    points = grid.points
    values, intervals = v0_values(points, rho, c)
    return ValueRow(values=values, intervals=intervals, threshold=extract_threshold(points, values))


def bellman_step(prev: ValueRow, grid: PolicyGrid, rho: float, c: float, pair: DensityPair,
                 quadrature: Optional[QuadratureConfig] = None,
                 operator: Optional[ExpectationOperator] = None) -> ValueRow:
    """
    V(π) = min{1 - π, min_m c Σ_{k<m} π_k + E[prev(π_m)]}; the expectation is H(Φ0^m(π))
    with H = T prev, since the observation after m silent slots only sees the prior Φ0^m(π).
    """
    points = grid.points
    if operator is None:
        operator = ExpectationOperator(pair, points, quadrature)
    expected = operator.apply(prev.values)
    pi = points[:, None]

    def continuation(ms: np.ndarray) -> np.ndarray:
        tail = silent_tail(pi, rho, ms[None, :])
        return c * silent_sum(pi, rho, ms[None, :]) + grid.interpolate(expected, 1.0 - tail)

    cont, best_m = _minimize_over_intervals(continuation, len(points), 1, m_search_cap(rho, c))
    stop = 1.0 - points
    go_on = cont < stop
    values = np.where(go_on, cont, stop)
    intervals = np.where(go_on, best_m, 0)
    return ValueRow(values=values, intervals=intervals, threshold=extract_threshold(points, values))


def solve_limited(rights: int, rho: float, c: float, pair: DensityPair, grid: Optional[PolicyGrid] = None,
                  quadrature: Optional[QuadratureConfig] = None,
                  operator: Optional[ExpectationOperator] = None) -> LimitedPolicyTable:
    """Offline procedure: V_0 in closed form, then N applications of the Bellman operator"""
    if rights < 0:
        raise DomainError(f"number of sampling rights must be nonnegative, got {rights}")
    grid = grid or PolicyGrid()
    quadrature = quadrature or QuadratureConfig()
    rows = [v0_row(grid, rho, c)]
    if operator is None and rights > 0:
        operator = ExpectationOperator(pair, grid.points, quadrature)
    for n in range(1, rights + 1):
        rows.append(bellman_step(rows[-1], grid, rho, c, pair, quadrature, operator))
        _log.debug("row %d/%d solved, threshold %.6f", n, rights, rows[-1].threshold)
    _log.info("limited-rights table solved: N=%d rho=%g c=%g G=%d, thresholds %s",
              rights, rho, c, grid.resolution, ", ".join(f"{t:.4f}" for t in (r.threshold for r in rows)))
    return LimitedPolicyTable(rows=rows, rho=rho, c=c, pair=pair, grid=grid, quadrature=quadrature)


def interval_of(table: LimitedPolicyTable, n_used: int, pi: float) -> int:
    """Optimal wait before the next sample with n_used rights spent"""
    if not 0 <= n_used < table.rights:
        raise DomainError(f"no sampling right left after {n_used} of {table.rights}")
    row = table.rows[table.rights - n_used]
    if pi >= row.threshold:
        raise DomainError(f"posterior {pi} lies in the stopping region (threshold {row.threshold})")
    return max(int(row.intervals[table.grid.nearest_index(pi)]), 1)


def steps_to_reach(pi: float, rho: float, threshold: float) -> int:
    """Smallest j >= 1 with Φ0^j(π) >= threshold"""
    if threshold >= 1.0:
        raise DomainError("silent propagation never reaches a threshold of 1")
    j = max(1, math.ceil(math.log((1.0 - threshold) / (1.0 - pi)) / math.log1p(-rho)))
    while 1.0 - silent_tail(pi, rho, j) < threshold:
        j += 1
    while j > 1 and 1.0 - silent_tail(pi, rho, j - 1) >= threshold:
        j -= 1
    return j


def cost_for_alpha(alpha: float, kl: float, rho: float) -> float:
    """Delay cost paired with a false-alarm target: continuing at 1 - π = α saves about α(1 - e^{-q})"""
    rate = kl - math.log1p(-rho)
    return -alpha * math.expm1(-rate)


class LimitedPolicy(DetectionPolicy):
    """
    Online procedure for a solved table. With alpha set, stops only at π >= 1 - α and
    keeps sampling every slot once the table would already stop.
    """

    name = "limited"

    def __init__(self, table: LimitedPolicyTable, alpha: Optional[float] = None):
        if alpha is not None and not 0.0 < alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
        self.table = table
        self.alpha = alpha

    @property
    def param(self) -> float:
        return self.alpha if self.alpha is not None else self.table.c

    @property
    def cost(self) -> Optional[float]:
        return self.table.c

    def _check_model(self, model: ChangeModel):
        if model.rho != self.table.rho or model.pair != self.table.pair:
            raise DomainError("table was solved for a different change model")

    def run(self, model: ChangeModel, seed: TrajectorySeed, energy: Optional[EnergyModel] = None,
            step_cap: int = DEFAULT_STEP_CAP, record_trace: bool = False) -> DetectionOutcome:
        self._check_model(model)
        table = self.table
        rho = table.rho
        gens = seed.generators()
        change_point = draw_change_point(model.prior, gens.change)
        stream = ObservationStream(model.pair, change_point, gens.observation)

        k, pi, used, delay_sum = 0, model.pi0, 0, 0.0
        sample_times: List[int] = []
        while used < table.rights:
            row_threshold = table.rows[table.rights - used].threshold
            stop_at = 1.0 - self.alpha if self.alpha is not None else row_threshold
            if pi >= stop_at:
                break
            m = 1 if pi >= row_threshold else interval_of(table, used, pi)
            delay_sum += float(silent_sum(pi, rho, m))
            k += m
            if k > step_cap:
                raise SimulationCapError(step_cap)
            pi = after_interval_with_llr(pi, rho, m, stream.llr_at(k))
            used += 1
            sample_times.append(k)
        else:
            stop_at = 1.0 - self.alpha if self.alpha is not None else table.rows[0].threshold
            if pi < stop_at:
                j = steps_to_reach(pi, rho, stop_at)
                if k + j > step_cap:
                    raise SimulationCapError(step_cap)
                delay_sum += float(silent_sum(pi, rho, j))
                pi = 1.0 - float(silent_tail(pi, rho, j))
                k += j

        return DetectionOutcome(tau=k, change_point=change_point, samples_used=used,
                                sample_times=tuple(sample_times), final_posterior=pi,
                                posterior_sum=delay_sum)


def run_limited_policy(table: LimitedPolicyTable, model: ChangeModel, seed: TrajectorySeed,
                       alpha: Optional[float] = None, step_cap: int = DEFAULT_STEP_CAP) -> DetectionOutcome:
    return LimitedPolicy(table, alpha).run(model, seed, step_cap=step_cap)
