"""
Monte Carlo - Trial execution and ADD / PFA / Bayes-risk estimation with standard errors
Trial i always runs on TrajectorySeed(master_seed, i), so every policy estimated with the same
master seed sees the same change points and observations, and results do not depend on --threads.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from errors import DomainError, SimulationCapError
from limited_policy import DEFAULT_STEP_CAP, DetectionPolicy, cost_for_alpha
from model import ChangeModel, EnergyModel, TrajectorySeed, kl_divergence
from stochastic_policy import energy_state_frequencies as _greedy_occupancy

_log = logging.getLogger(__name__)

DEFAULT_TRIALS = 200_000
MIN_TRIALS = 100
# more capped trials than this share fails the estimate
CAP_FRACTION = 1e-3
TRIAL_CHUNK = 2_000
PFA_CONFIDENCE = 0.95

CSV_COLUMNS = ["policy", "param", "trials", "pfa", "pfa_se", "add", "add_se", "risk", "risk_se", "mean_samples"]


@dataclass(frozen=True)
class TrialRecord:
    trial_index: int
    change_point: int
    tau: int
    samples_used: int
    false_alarm: bool
    delay_plus: int
    risk_contrib: float
    posterior_risk: float


def run_trial(policy: DetectionPolicy, model: ChangeModel, seed: TrajectorySeed, c: float,
              energy: Optional[EnergyModel] = None, step_cap: int = DEFAULT_STEP_CAP) -> TrialRecord:
    outcome = policy.run(model, seed, energy, step_cap=step_cap)
    return TrialRecord(
        trial_index=seed.trial_index,
        change_point=outcome.change_point,
        tau=outcome.tau,
        samples_used=outcome.samples_used,
        false_alarm=outcome.false_alarm,
        delay_plus=outcome.delay_plus,
        risk_contrib=outcome.loss(c),
        posterior_risk=outcome.posterior_loss(c),
    )


@dataclass(frozen=True)
class SimEstimate:
    trials: int
    add: float
    add_se: float
    pfa: float
    pfa_se: float
    risk: float
    risk_se: float
    mean_samples: float
    posterior_risk: float
    posterior_risk_se: float
    # standard error of the per-trial difference between the two risk forms
    duality_se: float
    cost: float
    capped: int = 0
    # exact binomial interval for the false-alarm probability
    pfa_low: float = 0.0
    pfa_high: float = 1.0

    @property
    def duality_gap(self) -> float:
        return self.risk - self.posterior_risk

    def row(self, policy: str, param: float) -> Dict[str, float]:
        return {
            "policy": policy,
            "param": param,
            "trials": self.trials,
            "pfa": self.pfa,
            "pfa_se": self.pfa_se,
            "add": self.add,
            "add_se": self.add_se,
            "risk": self.risk,
            "risk_se": self.risk_se,
            "mean_samples": self.mean_samples,
            "pfa_upper": self.pfa_high,
        }


@dataclass(frozen=True)
class RiskEstimate:
    risk: float
    risk_se: float
    posterior_risk: float
    posterior_risk_se: float
    duality_se: float
    trials: int

    def agrees(self, sigmas: float = 3.0) -> bool:
        """Delay form and posterior-sum form within `sigmas` paired standard errors"""
        return abs(self.risk - self.posterior_risk) <= sigmas * self.duality_se + 1e-12


# columns of the per-trial matrix returned by a chunk
_DELAY, _ALARM, _LOSS, _POSTERIOR_LOSS, _SAMPLES = range(5)


def _run_chunk(task) -> Tuple[np.ndarray, int]:
    policy, model, energy, master_seed, start, stop, c, step_cap = task
    rows = []
    capped = 0
    for index in range(start, stop):
        try:
            record = run_trial(policy, model, TrajectorySeed(master_seed, index), c, energy, step_cap)
        except SimulationCapError:
            capped += 1
            continue
        rows.append((record.delay_plus, float(record.false_alarm), record.risk_contrib,
                     record.posterior_risk, record.samples_used))
    return np.asarray(rows, dtype=float).reshape(-1, 5), capped


def _mean_se(values: np.ndarray) -> Tuple[float, float]:
    n = len(values)
    mean = math.fsum(values.tolist()) / n
    if n < 2:
        return mean, 0.0
    spread = math.fsum(((values - mean) ** 2).tolist()) / (n - 1)
    return mean, math.sqrt(spread / n)


def clopper_pearson(successes: int, trials: int, confidence: float = PFA_CONFIDENCE) -> Tuple[float, float]:
    """Exact two-sided binomial interval for `successes` out of `trials`"""
    if trials < 1 or not 0 <= successes <= trials:
        raise DomainError(f"invalid binomial count {successes} of {trials}")
    tail = 0.5 * (1.0 - confidence)
    low = 0.0 if successes == 0 else float(stats.beta.ppf(tail, successes, trials - successes + 1))
    high = 1.0 if successes == trials else float(stats.beta.ppf(1.0 - tail, successes + 1, trials - successes))
    return low, high


def _resolve_cost(policy: DetectionPolicy, model: ChangeModel, c: Optional[float]) -> float:
    if c is not None:
        return c
    if policy.cost is not None:
        return policy.cost
    # threshold policies are paired with the cost matching their α
    return cost_for_alpha(policy.param, kl_divergence(model.pair), model.rho)


def simulate(policy: DetectionPolicy, model: ChangeModel, trials: int, master_seed: int, c: float,
             energy: Optional[EnergyModel] = None, threads: int = 1,
             step_cap: int = DEFAULT_STEP_CAP) -> Tuple[np.ndarray, int]:
    """Per-trial (delay, alarm, loss, posterior loss, samples) rows in trial order, plus the capped count"""
    tasks = [(policy, model, energy, master_seed, start, min(start + TRIAL_CHUNK, trials), c, step_cap)
             for start in range(0, trials, TRIAL_CHUNK)]
    if threads <= 1 or len(tasks) == 1:
        results = [_run_chunk(task) for task in tasks]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_chunk, tasks))
    rows = np.concatenate([r for r, _ in results], axis=0)
    capped = sum(n for _, n in results)
    return rows, capped


def estimate(policy: DetectionPolicy, model: ChangeModel, trials: int = DEFAULT_TRIALS, master_seed: int = 0,
             energy: Optional[EnergyModel] = None, c: Optional[float] = None, threads: int = 1,
             step_cap: int = DEFAULT_STEP_CAP) -> SimEstimate:
    """
    ADD, PFA and Bayes risk of `policy` over `trials` independent trajectories.

    Trials that hit the step cap are dropped from the averages and counted; more than
    CAP_FRACTION of them raises SimulationCapError.
    """
    if trials < MIN_TRIALS:
        raise DomainError(f"need at least {MIN_TRIALS} trials, got {trials}")
    cost = _resolve_cost(policy, model, c)
    rows, capped = simulate(policy, model, trials, master_seed, cost, energy, threads, step_cap)
    if capped > CAP_FRACTION * trials:
        raise SimulationCapError(step_cap, f"{capped} of {trials} trials exceeded the step cap of {step_cap}")
    if capped:
        _log.warning("%s: %d of %d trials hit the step cap and were dropped", policy.name, capped, trials)

    add, add_se = _mean_se(rows[:, _DELAY])
    pfa, pfa_se = _mean_se(rows[:, _ALARM])
    risk, risk_se = _mean_se(rows[:, _LOSS])
    posterior_risk, posterior_risk_se = _mean_se(rows[:, _POSTERIOR_LOSS])
    _, duality_se = _mean_se(rows[:, _LOSS] - rows[:, _POSTERIOR_LOSS])
    mean_samples = math.fsum(rows[:, _SAMPLES].tolist()) / len(rows)
    pfa_low, pfa_high = clopper_pearson(int(round(rows[:, _ALARM].sum())), len(rows))
    _log.info("%s(%g): %d trials, ADD %.4f ± %.4f, PFA %.3e in [%.2e, %.2e]", policy.name, policy.param,
              len(rows), add, add_se, pfa, pfa_low, pfa_high)
    return SimEstimate(trials=len(rows), add=add, add_se=add_se, pfa=pfa, pfa_se=pfa_se, risk=risk,
                       risk_se=risk_se, mean_samples=mean_samples, posterior_risk=posterior_risk,
                       posterior_risk_se=posterior_risk_se, duality_se=duality_se, cost=cost, capped=capped,
                       pfa_low=pfa_low, pfa_high=pfa_high)


def risk_estimate(policy: DetectionPolicy, model: ChangeModel, c: float, trials: int = DEFAULT_TRIALS,
                  master_seed: int = 0, energy: Optional[EnergyModel] = None, threads: int = 1,
                  step_cap: int = DEFAULT_STEP_CAP) -> RiskEstimate:
    """c (τ - Λ)^+ + 1{τ < Λ} averaged, next to 1 - π_τ + c Σ_{k<τ} π_k on the same trials"""
    if not c > 0.0:
        raise DomainError(f"delay cost must be positive, got {c}")
    result = estimate(policy, model, trials, master_seed, energy, c, threads, step_cap)
    return RiskEstimate(risk=result.risk, risk_se=result.risk_se, posterior_risk=result.posterior_risk,
                        posterior_risk_se=result.posterior_risk_se, duality_se=result.duality_se,
                        trials=result.trials)


@dataclass(frozen=True)
class CurvePoint:
    value: float
    estimate: SimEstimate
    references: Dict[str, float] = field(default_factory=dict)


@dataclass
class CurveSet:
    """One policy swept over α (or c); bound columns ride along in `references`"""
    policy: str
    variable: str
    points: List[CurvePoint] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        records = []
        for point in self.points:
            record = point.estimate.row(self.policy, point.value)
            record.update(point.references)
            records.append(record)
        frame = pd.DataFrame.from_records(records)
        extra = [col for col in frame.columns if col not in CSV_COLUMNS]
        return frame[CSV_COLUMNS + extra] if records else pd.DataFrame(columns=CSV_COLUMNS)

    def summary(self) -> List[Dict[str, float]]:
        return [asdict(point.estimate) for point in self.points]


def _check_monotone(values: Sequence[float], name: str):
    diffs = np.diff(np.asarray(values, dtype=float))
    if len(values) == 0 or not (np.all(diffs < 0.0) or np.all(diffs > 0.0)):
        raise DomainError(f"{name} sweep values must be strictly monotone")


Factory = Callable[[float], DetectionPolicy]
Reference = Callable[[float], Dict[str, float]]


def sweep_alpha(factory: Factory, alphas: Sequence[float], model: ChangeModel, energy: Optional[EnergyModel] = None,
                trials: int = DEFAULT_TRIALS, master_seed: int = 0, threads: int = 1,
                step_cap: int = DEFAULT_STEP_CAP, references: Optional[Reference] = None) -> CurveSet:
    """One estimate per α, in the given decreasing order"""
    if any(not 0.0 < a < 1.0 for a in alphas):
        raise DomainError("every alpha must lie in (0, 1)")
    diffs = np.diff(np.asarray(alphas, dtype=float))
    if len(alphas) == 0 or np.any(diffs >= 0.0):
        raise DomainError("alpha sweep must be strictly decreasing")
    curve = None
    for alpha in alphas:
        policy = factory(alpha)
        curve = curve or CurveSet(policy=policy.name, variable="alpha")
        result = estimate(policy, model, trials, master_seed, energy, threads=threads, step_cap=step_cap)
        curve.points.append(CurvePoint(alpha, result, references(alpha) if references else {}))
    return curve


def sweep_cost(factory: Factory, costs: Sequence[float], model: ChangeModel, energy: Optional[EnergyModel] = None,
               trials: int = DEFAULT_TRIALS, master_seed: int = 0, threads: int = 1,
               step_cap: int = DEFAULT_STEP_CAP, references: Optional[Reference] = None) -> CurveSet:
    """Lagrangian sweep: one estimate per delay cost c"""
    if any(not c > 0.0 for c in costs):
        raise DomainError("every delay cost must be positive")
    _check_monotone(costs, "cost")
    curve = None
    for c in costs:
        policy = factory(c)
        curve = curve or CurveSet(policy=policy.name, variable="c")
        result = estimate(policy, model, trials, master_seed, energy, c=c, threads=threads, step_cap=step_cap)
        curve.points.append(CurvePoint(c, result, references(c) if references else {}))
    return curve


def fit_slope(curve: CurveSet) -> Tuple[float, float]:
    """Least-squares ADD = slope |ln α| + intercept; cost sweeps use the estimated PFA for α"""
    if curve.variable == "alpha":
        alphas = np.array([p.value for p in curve.points])
    else:
        alphas = np.array([p.estimate.pfa for p in curve.points])
    if len(alphas) < 2 or np.any(alphas <= 0.0):
        raise DomainError("slope fit needs at least two points with positive false-alarm level")
    add = np.array([p.estimate.add for p in curve.points])
    slope, intercept = np.polyfit(-np.log(alphas), add, 1)
    return float(slope), float(intercept)


def energy_state_frequencies(energy: EnergyModel, steps: int, master_seed: int = 0) -> np.ndarray:
    """Empirical occupancy of the greedy energy chain, on the energy stream of trial 0"""
    if steps < 1:
        raise DomainError(f"need at least one step, got {steps}")
    rng = TrajectorySeed(master_seed, 0).generators().energy
    return _greedy_occupancy(energy, steps, rng)
