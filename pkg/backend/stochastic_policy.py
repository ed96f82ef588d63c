"""
Stochastic Policy - Detection when sampling rights arrive at random into a finite battery
Covers backward induction over a finite horizon, stationary value iteration over (π, N),
the optimal sample/stop rules, the greedy+threshold scheme and the greedy energy chain.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components

from errors import ChainError, ConvergenceError, DomainError, SimulationCapError
from limited_policy import DEFAULT_STEP_CAP, DetectionOutcome, DetectionPolicy, PolicyGrid
from model import (
    ChangeModel,
    DensityPair,
    EnergyModel,
    ObservationStream,
    ReplenishmentStream,
    TrajectorySeed,
    draw_change_point,
    draw_replenishments,
)
from posterior import after_interval_with_llr, propagate_silent
from quadrature import ExpectationOperator, QuadratureConfig

_log = logging.getLogger(__name__)

# branch values closer than this count as a tie, which conserves the right
TIE_TOL = 1e-12
STOCHASTIC_TOL = 1e-12
STATIONARY_AGREEMENT = 1e-10
MAX_SQUARINGS = 64
# squaring changes below this are rounding noise
ROUNDING_FLOOR = 1e-8


@dataclass
class StochasticValueTable:
    """V(π, N) and the two branches of W(π, N, ν) on grid x energy states x arrivals"""
    grid: PolicyGrid
    energy: EnergyModel
    rho: float
    c: float
    pair: DensityPair
    v: np.ndarray
    w_silent: np.ndarray
    w_sample: np.ndarray
    iterations: int
    achieved_tol: float
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)

    @property
    def capacity(self) -> int:
        return self.energy.capacity

    @property
    def w(self) -> np.ndarray:
        return np.minimum(self.w_silent, self.w_sample)

    def value(self, pi: float, energy_state: int) -> float:
        return float(np.interp(pi, self.grid.points, self.v[:, energy_state]))

    def continuation(self, pi: float, energy_state: int) -> float:
        """cπ + E_ν[W(π, N, ν)]"""
        w_at = self.grid.interpolate(self.w[:, energy_state, :], np.asarray(pi))
        return self.c * pi + float(np.dot(w_at, self.energy.probabilities))


class _EnergyBellman:
    """One sweep of the (π, N) recursion with the index bookkeeping precomputed"""

    def __init__(self, grid: PolicyGrid, rho: float, c: float, energy: EnergyModel,
                 operator: ExpectationOperator):
        self.grid = grid
        self.c = c
        self.operator = operator
        self.points = grid.points
        self.prior_next = propagate_silent(self.points, rho)
        self.pmf = energy.probabilities
        states = np.arange(energy.capacity + 1)[:, None]
        arrivals = np.arange(energy.max_arrival + 1)[None, :]
        total = states + arrivals
        self.keep = np.minimum(energy.capacity, total)
        self.spend = np.minimum(energy.capacity, np.maximum(total - 1, 0))
        self.can_sample = total >= 1

    def branches(self, values: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        silent_next = self.grid.interpolate(values, self.prior_next)
        sampled_next = self.grid.interpolate(self.operator.apply(values), self.prior_next)
        w_silent = silent_next[:, self.keep]
        w_sample = np.where(self.can_sample[None, :, :], sampled_next[:, self.spend], np.inf)
        return w_silent, w_sample

    def __call__(self, values: np.ndarray) -> np.ndarray:
        w_silent, w_sample = self.branches(values)
        cont = self.c * self.points[:, None] + np.minimum(w_silent, w_sample) @ self.pmf
        return np.minimum((1.0 - self.points)[:, None], cont)


def _bellman(grid: PolicyGrid, rho: float, c: float, pair: DensityPair, energy: EnergyModel,
             quadrature: Optional[QuadratureConfig], operator: Optional[ExpectationOperator]) -> _EnergyBellman:
    if not c > 0.0:
        raise DomainError(f"delay cost must be positive, got {c}")
    if operator is None:
        operator = ExpectationOperator(pair, grid.points, quadrature)
    return _EnergyBellman(grid, rho, c, energy, operator)


def finite_horizon_solve(horizon: int, rho: float, c: float, pair: DensityPair, energy: EnergyModel,
                         grid: Optional[PolicyGrid] = None, quadrature: Optional[QuadratureConfig] = None,
                         operator: Optional[ExpectationOperator] = None) -> np.ndarray:
    """
    Backward induction from V^T_T(π, N) = 1 - π. Returns an array indexed
    [k, grid point, energy state] holding V^T_k for k = 0..T.
    """
    if horizon < 1:
        raise DomainError(f"horizon must be at least 1, got {horizon}")
    grid = grid or PolicyGrid()
    sweep = _bellman(grid, rho, c, pair, energy, quadrature, operator)
    values = np.empty((horizon + 1, grid.resolution, energy.capacity + 1))
    values[horizon] = (1.0 - grid.points)[:, None]
    for k in range(horizon - 1, -1, -1):
        values[k] = sweep(values[k + 1])
    return values


def infinite_horizon_solve(rho: float, c: float, pair: DensityPair, energy: EnergyModel,
                           grid: Optional[PolicyGrid] = None, tol: float = 1e-9, max_iters: int = 10_000,
                           quadrature: Optional[QuadratureConfig] = None,
                           operator: Optional[ExpectationOperator] = None) -> StochasticValueTable:
    """Stationary value iteration until the sup-norm change drops below tol"""
    if not tol > 0.0:
        raise DomainError(f"value-iteration tolerance must be positive, got {tol}")
    grid = grid or PolicyGrid()
    quadrature = quadrature or QuadratureConfig()
    sweep = _bellman(grid, rho, c, pair, energy, quadrature, operator)
    values = np.repeat((1.0 - grid.points)[:, None], energy.capacity + 1, axis=1)
    change = math.inf
    for iteration in range(1, max_iters + 1):
        updated = sweep(values)
        change = float(np.max(np.abs(updated - values)))
        values = updated
        if iteration % 100 == 0:
            _log.debug("value iteration %d: sup change %.3e", iteration, change)
        if change < tol:
            w_silent, w_sample = sweep.branches(values)
            _log.info("stochastic table solved: C=%d rho=%g c=%g in %d sweeps (change %.2e)",
                      energy.capacity, rho, c, iteration, change)
            return StochasticValueTable(grid=grid, energy=energy, rho=rho, c=c, pair=pair, v=values,
                                        w_silent=w_silent, w_sample=w_sample, iterations=iteration,
                                        achieved_tol=change, quadrature=quadrature)
    raise ConvergenceError("stationary value iteration did not converge", achieved_tol=change,
                           iterations=max_iters)


def _check_state(energy_state: int, nu: int, table: StochasticValueTable):
    if energy_state < 0 or nu < 0:
        raise DomainError("energy state and arrivals must be nonnegative")
    if energy_state > table.capacity or nu > table.energy.max_arrival:
        raise DomainError(f"state ({energy_state}, {nu}) outside the solved table")


def optimal_action(table: StochasticValueTable, pi: float, energy_state: int, nu: int) -> int:
    """Spend a right iff sampling strictly lowers W; never without a right in hand"""
    _check_state(energy_state, nu, table)
    if energy_state + nu == 0:
        return 0
    points = table.grid.points
    silent = float(np.interp(pi, points, table.w_silent[:, energy_state, nu]))
    sample = float(np.interp(pi, points, table.w_sample[:, energy_state, nu]))
    return int(sample < silent - TIE_TOL)


def optimal_stop(table: StochasticValueTable, pi: float, energy_state: int) -> bool:
    return 1.0 - pi <= table.continuation(pi, energy_state)


def greedy_action(prev_energy: int, nu: int) -> int:
    """Sample whenever a right is available"""
    if prev_energy < 0:
        raise DomainError(f"energy state must be nonnegative, got {prev_energy}")
    return int(prev_energy + nu >= 1)


def greedy_threshold_stop(pi: float, alpha: float) -> bool:
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return pi >= 1.0 - alpha


def transition_matrix(energy: EnergyModel) -> np.ndarray:
    """Law of N_k given N_{k-1} when every available right is spent"""
    size = energy.capacity + 1
    matrix = np.zeros((size, size))
    for state in range(size):
        for nu, p in enumerate(energy.pmf):
            nxt = min(energy.capacity, state + nu - greedy_action(state, nu))
            matrix[state, nxt] += p
    return matrix


def _check_stochastic(matrix: np.ndarray):
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DomainError(f"transition matrix must be square, got shape {matrix.shape}")
    if np.any(matrix < 0.0) or np.max(np.abs(matrix.sum(axis=1) - 1.0)) > STOCHASTIC_TOL:
        raise DomainError("transition matrix is not row-stochastic")


def _reachable(matrix: np.ndarray, initial: int) -> np.ndarray:
    order = breadth_first_order(csr_matrix(matrix > 0.0), initial, directed=True, return_predecessors=False)
    return np.sort(order)


def _embed(size: int, states: np.ndarray, weights: np.ndarray) -> np.ndarray:
    full = np.zeros(size)
    full[states] = weights
    return full


def stationary_by_solve(matrix: np.ndarray, initial: int = 0) -> np.ndarray:
    """w = wP on the states reachable from `initial`, by a dense solve with a normalization row"""
    _check_stochastic(matrix)
    states = _reachable(matrix, initial)
    sub = matrix[np.ix_(states, states)]
    n_classes, labels = connected_components(csr_matrix(sub > 0.0), directed=True, connection="strong")
    closed = [lab for lab in range(n_classes)
              if not np.any(sub[np.ix_(labels == lab, labels != lab)] > 0.0)]
    if len(closed) != 1:
        raise ChainError(f"energy chain has {len(closed)} closed classes reachable from state {initial}")
    system = sub.T - np.eye(len(states))
    system[-1, :] = 1.0
    rhs = np.zeros(len(states))
    rhs[-1] = 1.0
    try:
        weights = linalg.solve(system, rhs)
    except linalg.LinAlgError as exc:
        raise ChainError(f"stationary system is singular: {exc}") from exc
    return _embed(len(matrix), states, np.clip(weights, 0.0, None))


def stationary_by_power(matrix: np.ndarray, initial: int = 0, tol: float = 1e-13) -> np.ndarray:
    """
    Limit of e_initial P^k, computed by repeated squaring. Rows are renormalised after every
    squaring; the loop ends once the change per squaring falls under tol * size or stops shrinking
    at rounding level.
    """
    _check_stochastic(matrix)
    size = len(matrix)
    power = matrix.copy()
    previous = math.inf
    for _ in range(MAX_SQUARINGS):
        squared = power @ power
        squared /= squared.sum(axis=1, keepdims=True)
        change = float(np.max(np.abs(squared - power)))
        power = squared
        if change <= tol * size or (change < ROUNDING_FLOOR and change >= previous):
            break
        previous = change
    else:
        raise ChainError("powers of the energy chain do not settle; the chain is periodic")
    row = power[initial]
    # a periodic chain settles on P^(2^k) = P^d, whose rows P does not fix
    if np.max(np.abs(row @ matrix - row)) > STATIONARY_AGREEMENT:
        raise ChainError("powers of the energy chain do not settle; the chain is periodic")
    return row


def _stationary_pair(matrix: np.ndarray, initial: int) -> Tuple[np.ndarray, np.ndarray]:
    solved = stationary_by_solve(matrix, initial)
    powered = stationary_by_power(matrix, initial)
    gap = float(np.max(np.abs(solved - powered)))
    if gap > STATIONARY_AGREEMENT:
        raise ChainError(f"linear solve and power iteration disagree by {gap:.3e}")
    return solved, powered


def stationary_distribution(matrix: np.ndarray, initial: int = 0) -> np.ndarray:
    """Linear solve, cross-checked against power iteration"""
    return _stationary_pair(matrix, initial)[0]


@dataclass
class EnergyChain:
    transition: np.ndarray
    stationary: np.ndarray
    power_stationary: np.ndarray
    sampling_fraction: float

    @property
    def degenerate(self) -> bool:
        return self.sampling_fraction <= 0.0


def energy_chain(energy: EnergyModel) -> EnergyChain:
    matrix = transition_matrix(energy)
    solved, powered = _stationary_pair(matrix, energy.initial)
    chain = EnergyChain(transition=matrix, stationary=solved, power_stationary=powered,
                        sampling_fraction=_fraction(energy, solved))
    if chain.degenerate:
        _log.warning("energy chain is absorbed without replenishment; greedy sampling stops")
    return chain


def _fraction(energy: EnergyModel, stationary: np.ndarray) -> float:
    if energy.p0 == 0.0:
        return 1.0
    return float(1.0 - energy.p0 * stationary[0])


def sampling_fraction(energy: EnergyModel) -> float:
    """Long-run share of sampled slots under greedy sampling, 1 - p0 w̃0"""
    if energy.p0 == 0.0:
        return 1.0
    return _fraction(energy, stationary_distribution(transition_matrix(energy), energy.initial))


ActionRule = Callable[[float, int, int], int]
StopRule = Callable[[float, int], bool]


def _simulate(model: ChangeModel, seed: TrajectorySeed, energy: EnergyModel, act: ActionRule,
              stop: StopRule, step_cap: int, record_trace: bool) -> DetectionOutcome:
    """Per slot: observe ν_k, choose μ_k, update (π_k, N_k), then decide δ_k"""
    rho = model.rho
    gens = seed.generators()
    change_point = draw_change_point(model.prior, gens.change)
    observations = ObservationStream(model.pair, change_point, gens.observation)
    arrivals = ReplenishmentStream(energy, gens.energy)

    k, pi, stored, delay_sum = 0, model.pi0, energy.initial, 0.0
    sample_times: List[int] = []
    trace: List[Tuple[int, int, int]] = []
    while not stop(pi, stored):
        k += 1
        if k > step_cap:
            raise SimulationCapError(step_cap)
        nu = arrivals.at(k)
        mu = act(pi, stored, nu)
        stored = min(energy.capacity, stored + nu - mu)
        delay_sum += pi
        if mu:
            pi = after_interval_with_llr(pi, rho, 1, observations.llr_at(k))
            sample_times.append(k)
        else:
            pi = pi + (1.0 - pi) * rho
        if record_trace:
            trace.append((nu, mu, stored))
    return DetectionOutcome(tau=k, change_point=change_point, samples_used=len(sample_times),
                            sample_times=tuple(sample_times), final_posterior=pi,
                            posterior_sum=delay_sum, trace=tuple(trace))


class GreedyThresholdPolicy(DetectionPolicy):
    """Spend every right as soon as it is available; stop at π >= 1 - α"""

    name = "greedy"

    def __init__(self, alpha: float, energy: Optional[EnergyModel] = None):
        if not 0.0 < alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
        self.alpha = alpha
        self.energy = energy

    @property
    def param(self) -> float:
        return self.alpha

    def run(self, model: ChangeModel, seed: TrajectorySeed, energy: Optional[EnergyModel] = None,
            step_cap: int = DEFAULT_STEP_CAP, record_trace: bool = False) -> DetectionOutcome:
        energy = energy or self.energy
        if energy is None:
            raise DomainError("greedy policy needs an energy model")
        alpha = self.alpha
        return _simulate(model, seed, energy,
                         lambda pi, stored, nu: greedy_action(stored, nu),
                         lambda pi, stored: greedy_threshold_stop(pi, alpha),
                         step_cap, record_trace)


class OptimalStochasticPolicy(DetectionPolicy):
    """Sample and stop by the solved stationary table"""

    name = "optimal"

    def __init__(self, table: StochasticValueTable):
        self.table = table

    @property
    def param(self) -> float:
        return self.table.c

    @property
    def cost(self) -> Optional[float]:
        return self.table.c

    def run(self, model: ChangeModel, seed: TrajectorySeed, energy: Optional[EnergyModel] = None,
            step_cap: int = DEFAULT_STEP_CAP, record_trace: bool = False) -> DetectionOutcome:
        table = self.table
        if model.rho != table.rho or model.pair != table.pair:
            raise DomainError("table was solved for a different change model")
        if energy is not None and energy != table.energy:
            raise DomainError("table was solved for a different energy model")
        return _simulate(model, seed, table.energy,
                         lambda pi, stored, nu: optimal_action(table, pi, stored, nu),
                         lambda pi, stored: optimal_stop(table, pi, stored),
                         step_cap, record_trace)


def run_stochastic_policy(policy: str, model: ChangeModel, energy: EnergyModel, seed: TrajectorySeed,
                          table: Optional[StochasticValueTable] = None, alpha: Optional[float] = None,
                          step_cap: int = DEFAULT_STEP_CAP, record_trace: bool = False) -> DetectionOutcome:
    if policy == "greedy":
        if alpha is None:
            raise DomainError("greedy policy needs alpha")
        runner: DetectionPolicy = GreedyThresholdPolicy(alpha, energy)
    elif policy == "optimal":
        if table is None:
            raise DomainError("optimal policy needs a solved table")
        runner = OptimalStochasticPolicy(table)
    else:
        raise DomainError(f"unknown stochastic policy {policy!r}")
    return runner.run(model, seed, energy, step_cap=step_cap, record_trace=record_trace)


def energy_state_frequencies(energy: EnergyModel, steps: int, rng: np.random.Generator) -> np.ndarray:
    """Occupancy of N_k over `steps` greedy slots started from energy.initial"""
    counts = np.zeros(energy.capacity + 1, dtype=np.int64)
    stored = energy.initial
    for nu in draw_replenishments(energy, rng, steps).tolist():
        stored = min(energy.capacity, stored + nu - greedy_action(stored, nu))
        counts[stored] += 1
    return counts / steps
