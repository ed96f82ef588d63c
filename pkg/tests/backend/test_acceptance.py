"""
Desk-scale reproductions of the detection trade-offs. Trial counts default to QCD_ACCEPTANCE_TRIALS
(20000); the tolerances are statistical, so raise the count for tighter runs.
"""

import math

import pytest

from baselines_bounds import ShiryaevPolicy, UniformSamplingPolicy
from conftest import HARVEST_PMF, acceptance_trials
from limited_policy import LimitedPolicy, PolicyGrid, cost_for_alpha, solve_limited
from model import ChangeModel, EnergyModel, GeometricPrior, kl_divergence, make_gaussian_pair
from montecarlo import estimate, fit_slope, risk_estimate, sweep_alpha
from quadrature import ExpectationOperator
from stochastic_policy import GreedyThresholdPolicy, sampling_fraction

pytestmark = pytest.mark.slow


def test_kl_constants():
    assert abs(kl_divergence(make_gaussian_pair(1.0, 0.0)) - 0.153426) < 1e-5
    assert abs(-math.log1p(-0.1) - 0.105361) < 1e-6


def test_structure_of_the_full_resolution_table():
    table = solve_limited(8, 0.1, 0.01, make_gaussian_pair(1.0, 0.0), PolicyGrid(2001))
    audit = table.audit()
    assert audit["concavity"] <= 1e-8
    assert audit["above_stop"] <= 1e-12
    assert audit["at_one"] <= 1e-12
    assert audit["dominance"] <= 1e-9
    assert audit["crossings"] <= 1


@pytest.mark.parametrize("rights", [1, 2])
def test_table_value_matches_simulated_risk(rights):
    pair = make_gaussian_pair(1.0, 0.0)
    model = ChangeModel(GeometricPrior(0.0, 0.2), pair)
    table = solve_limited(rights, 0.2, 0.02, pair, PolicyGrid(2001))
    result = risk_estimate(LimitedPolicy(table), model, c=0.02, trials=acceptance_trials(), master_seed=31)
    # grid discretization adds a small deterministic bias on top of the sampling error
    assert abs(table.value(0.0) - result.risk) <= 3 * result.risk_se + 1e-3
    assert result.agrees(3.0)


def test_limited_curves_lie_between_the_baselines():
    pair = make_gaussian_pair(1.0, 0.0)
    model = ChangeModel(GeometricPrior(0.0, 0.1), pair)
    kl = kl_divergence(pair)
    grid = PolicyGrid(2001)
    operator = ExpectationOperator(pair, grid.points)
    trials = acceptance_trials()
    for alpha in (1e-1, 1e-2, 1e-3):
        c = cost_for_alpha(alpha, kl, 0.1)
        curve = [
            estimate(ShiryaevPolicy(0.1, pair, alpha), model, trials, 41),
            estimate(LimitedPolicy(solve_limited(30, 0.1, c, pair, grid, operator=operator), alpha), model, trials, 41),
            estimate(LimitedPolicy(solve_limited(8, 0.1, c, pair, grid, operator=operator), alpha), model, trials, 41),
            estimate(UniformSamplingPolicy(11, alpha), model, trials, 41),
        ]
        for better, worse in zip(curve, curve[1:]):
            assert better.add <= worse.add + 3 * (better.add_se + worse.add_se)


def test_threshold_policies_keep_false_alarms_below_alpha():
    pair = make_gaussian_pair(1.0, 0.0)
    model = ChangeModel(GeometricPrior(0.0, 0.1), pair)
    energy = EnergyModel(3, HARVEST_PMF)
    table = solve_limited(8, 0.1, 0.01, pair, PolicyGrid(2001))
    trials = acceptance_trials()
    for alpha in (0.1, 0.01):
        for policy, extra in ((ShiryaevPolicy(0.1, pair, alpha), None),
                              (UniformSamplingPolicy(11, alpha), None),
                              (GreedyThresholdPolicy(alpha), energy),
                              (LimitedPolicy(table, alpha), None)):
            result = estimate(policy, model, trials, 53, energy=extra)
            assert result.pfa <= alpha + 3 * result.pfa_se


def test_greedy_delay_grows_at_the_asymptotic_rate():
    pair = make_gaussian_pair(1.0, 5.0)
    model = ChangeModel(GeometricPrior(0.0, 0.1), pair)
    energy = EnergyModel(3, HARVEST_PMF)
    rate = sampling_fraction(energy) * kl_divergence(pair) - math.log1p(-0.1)
    curve = sweep_alpha(lambda a: GreedyThresholdPolicy(a, energy), [1e-1, 1e-2, 1e-3, 1e-4], model, energy,
                        trials=acceptance_trials(), master_seed=61)
    slope, intercept = fit_slope(curve)
    assert slope == pytest.approx(1.0 / rate, rel=0.15)
    assert abs(intercept) < 10.0
