import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from baselines_bounds import shiryaev_value_function
from errors import DomainError
from limited_policy import (
    LimitedPolicy,
    PolicyGrid,
    ValueRow,
    bellman_step,
    cost_for_alpha,
    interval_of,
    m_search_cap,
    run_limited_policy,
    solve_limited,
    steps_to_reach,
    v0_row,
    v0_values,
)
from model import (
    ChangeModel,
    GaussianVariancePair,
    GeometricPrior,
    TrajectorySeed,
    kl_divergence,
    make_gaussian_pair,
)
from posterior import propagate_silent, silent_sum, silent_tail
from quadrature import ExpectationOperator


@pytest.fixture(scope="module")
def table_n3():
    return solve_limited(3, 0.1, 0.02, make_gaussian_pair(1.0, 0.0), PolicyGrid(201))


def _brute_force_costs(pi, rho, c, horizon):
    costs = [1.0 - pi]
    p, spent = pi, 0.0
    for _ in range(horizon):
        spent += c * p
        p = propagate_silent(p, rho)
        costs.append(spent + 1.0 - p)
    return np.array(costs)


@settings(max_examples=1000, deadline=None)
@given(pi=st.floats(min_value=0.0, max_value=1.0), rho=st.floats(min_value=0.02, max_value=0.9),
       c=st.floats(min_value=0.01, max_value=2.0))
def test_v0_matches_brute_force(pi, rho, c):
    values, intervals = v0_values(np.array([pi]), rho, c)
    costs = _brute_force_costs(pi, rho, c, 10 * m_search_cap(rho, c))
    best = costs.min()
    assert values[0] == pytest.approx(best, abs=1e-9)
    # shortest wait among the minimizers
    assert intervals[0] == int(np.flatnonzero(costs <= best + 1e-12)[0])


def test_v0_threshold_is_closed_form():
    row = v0_row(PolicyGrid(2001), 0.1, 0.05)
    assert row.threshold == pytest.approx(0.1 / 0.15, abs=1e-3)
    row = v0_row(PolicyGrid(2001), 0.5, 1.0)
    assert row.threshold == pytest.approx(0.5 / 1.5, abs=1e-3)


def test_v0_rejects_nonpositive_cost():
    with pytest.raises(DomainError):
        v0_row(PolicyGrid(11), 0.1, 0.0)


def test_zero_rights_gives_single_row(pair_0db, small_grid):
    table = solve_limited(0, 0.1, 0.05, pair_0db, small_grid)
    assert table.rights == 0
    assert len(table.thresholds()) == 1


def test_solved_rows_have_the_structure_of_the_optimum(table_n3):
    audit = table_n3.audit()
    assert audit["concavity"] <= 1e-8
    assert audit["above_stop"] <= 1e-12
    assert audit["at_one"] <= 1e-12
    assert audit["dominance"] <= 1e-9
    assert audit["crossings"] <= 1
    thresholds = table_n3.thresholds()
    assert all(0.0 < t < 1.0 for t in thresholds)
    assert table_n3.value(1.0) == pytest.approx(0.0, abs=1e-12)


def test_more_rights_never_hurt(table_n3):
    values = [row.values for row in table_n3.rows]
    for lower, higher in zip(values, values[1:]):
        assert np.all(higher <= lower + 1e-9)


def test_interval_queries(table_n3):
    assert interval_of(table_n3, 0, 0.0) >= 1
    with pytest.raises(DomainError):
        interval_of(table_n3, 0, 0.999)
    with pytest.raises(DomainError):
        interval_of(table_n3, 3, 0.1)


def test_steps_to_reach():
    assert steps_to_reach(0.0, 0.5, 0.74) == 2
    assert steps_to_reach(0.0, 0.5, 0.75) == 2
    assert steps_to_reach(0.9, 0.1, 0.5) == 1
    with pytest.raises(DomainError):
        steps_to_reach(0.0, 0.1, 1.0)


def test_cost_for_alpha_is_below_alpha(pair_0db):
    c = cost_for_alpha(0.01, kl_divergence(pair_0db), 0.1)
    assert 0.0 < c < 0.01


def test_no_rights_stops_at_deterministic_time(pair_0db, small_grid, model_0db):
    table = solve_limited(0, 0.1, 0.05, pair_0db, small_grid)
    outcome = run_limited_policy(table, model_0db, TrajectorySeed(5, 0))
    assert outcome.samples_used == 0
    assert outcome.tau == steps_to_reach(0.0, 0.1, table.rows[0].threshold)


def test_online_policy_respects_budget(table_n3, model_0db):
    for index in range(30):
        outcome = LimitedPolicy(table_n3).run(model_0db, TrajectorySeed(11, index))
        assert outcome.samples_used <= 3
        assert list(outcome.sample_times) == sorted(set(outcome.sample_times))
        assert outcome.final_posterior >= table_n3.thresholds()[outcome.samples_used] - 1e-12


def test_alpha_override_reaches_target(table_n3, model_0db):
    policy = LimitedPolicy(table_n3, alpha=0.05)
    assert policy.param == 0.05
    assert policy.cost == table_n3.c
    for index in range(20):
        assert policy.run(model_0db, TrajectorySeed(2, index)).final_posterior >= 0.95


def test_online_policy_is_deterministic(table_n3, model_0db):
    a = LimitedPolicy(table_n3).run(model_0db, TrajectorySeed(99, 4))
    b = LimitedPolicy(table_n3).run(model_0db, TrajectorySeed(99, 4))
    assert a == b


def test_table_rejects_other_models(table_n3, pair_0db):
    other = ChangeModel(GeometricPrior(0.0, 0.3), pair_0db)
    with pytest.raises(DomainError):
        LimitedPolicy(table_n3).run(other, TrajectorySeed(1, 0))


def test_bellman_step_with_worthless_future(pair_0db, small_grid):
    points = small_grid.points
    prev = ValueRow(values=np.zeros(len(points)), intervals=np.zeros(len(points), dtype=int), threshold=0.0)
    row = bellman_step(prev, small_grid, 0.1, 0.05, pair_0db)
    np.testing.assert_allclose(row.values, np.minimum(1.0 - points, 0.05 * points), rtol=0.0, atol=1e-12)
    go_on = 0.05 * points < 1.0 - points
    assert np.all(row.intervals[go_on] == 1)
    assert np.all(row.intervals[~go_on] == 0)


def test_bellman_step_with_uninformative_observations(small_grid):
    rho, c = 0.2, 0.05
    points = small_grid.points
    prev = v0_row(small_grid, rho, c)
    row = bellman_step(prev, small_grid, rho, c, GaussianVariancePair(1.0, 0.0))
    ms = np.arange(1, m_search_cap(rho, c) + 1)
    pi = points[:, None]
    landed = 1.0 - silent_tail(pi, rho, ms[None, :])
    cont = c * silent_sum(pi, rho, ms[None, :]) + np.interp(landed, points, prev.values)
    np.testing.assert_allclose(row.values, np.minimum(1.0 - points, cont.min(axis=1)), rtol=0.0, atol=1e-9)


def test_stops_fall_on_sample_epochs_while_rights_remain(table_n3, model_0db):
    early = 0
    for index in range(100):
        outcome = LimitedPolicy(table_n3).run(model_0db, TrajectorySeed(31, index))
        if outcome.samples_used < table_n3.rights:
            early += 1
            assert outcome.tau == (outcome.sample_times[-1] if outcome.sample_times else 0)
    assert early > 0


def test_grid_refinement_changes_little(pair_0db):
    coarse = solve_limited(2, 0.1, 0.02, pair_0db, PolicyGrid(1001))
    fine = solve_limited(2, 0.1, 0.02, pair_0db, PolicyGrid(2001))
    for low, high in zip(coarse.rows, fine.rows):
        assert np.max(np.abs(high.values[::2][1:-1] - low.values[1:-1])) < 1e-3
        assert high.threshold == pytest.approx(low.threshold, abs=2e-3)


def test_many_cheap_rights_approach_full_observation(pair_0db, small_grid):
    rho, c = 0.2, 0.005
    operator = ExpectationOperator(pair_0db, small_grid.points)
    table = solve_limited(40, rho, c, pair_0db, small_grid, operator=operator)
    classic = shiryaev_value_function(rho, c, pair_0db, small_grid, operator=operator)
    gap = table.rows[-1].values - classic.values
    assert np.max(gap) <= 2e-3
    assert np.min(gap) >= -1e-3
