import math
from dataclasses import dataclass

import numpy as np
import pytest
from scipy import stats

from errors import DomainError
from model import (
    DensityPair,
    EnergyModel,
    GaussianVariancePair,
    GeometricPrior,
    ObservationStream,
    ReplenishmentStream,
    TrajectorySeed,
    draw_change_points,
    kl_divergence,
    log_likelihood_ratio,
    make_gaussian_pair,
    pair_from_description,
)


@dataclass(frozen=True)
class MeanShiftPair(DensityPair):
    shift: float = 1.0

    def log_density(self, x, post_change):
        return stats.norm.logpdf(x, loc=self.shift if post_change else 0.0)

    def sample_block(self, rng, post_mask):
        return rng.standard_normal(len(post_mask)) + np.where(post_mask, self.shift, 0.0)

    def support(self, width_sigmas):
        return -width_sigmas, self.shift + width_sigmas

    def describe(self):
        return {"kind": "mean_shift", "shift": self.shift}


def test_kl_at_zero_db():
    pair = make_gaussian_pair(1.0, 0.0)
    assert pair.shift == 1.0
    assert abs(kl_divergence(pair) - 0.153426) < 1e-5
    assert abs(-math.log1p(-0.1) - 0.105361) < 1e-6


def test_kl_at_five_db():
    assert abs(kl_divergence(make_gaussian_pair(1.0, 5.0)) - 0.86811) < 1e-4


def test_kl_numeric_fallback_for_other_pairs():
    assert abs(kl_divergence(MeanShiftPair(1.0)) - 0.5) < 1e-6


def test_closed_form_llr_matches_densities():
    pair = make_gaussian_pair(2.0, 3.0)
    x = np.linspace(-6.0, 6.0, 25)
    direct = pair.log_density(x, True) - pair.log_density(x, False)
    np.testing.assert_allclose(pair.log_likelihood_ratio(x), direct, atol=1e-12)
    assert log_likelihood_ratio(pair, 1.5, sampled=False) == 0.0


def test_invalid_pairs_rejected():
    with pytest.raises(DomainError):
        make_gaussian_pair(0.0, 0.0)
    with pytest.raises(DomainError):
        GaussianVariancePair(1.0, -0.5)
    with pytest.raises(DomainError):
        pair_from_description({"kind": "laplace"})


def test_pair_description_inverts():
    pair = make_gaussian_pair(1.5, -5.0)
    assert pair_from_description(pair.describe()) == pair


def test_geometric_prior_mass():
    prior = GeometricPrior(0.2, 0.3)
    total = sum(prior.pmf(k) for k in range(200))
    assert abs(total - 1.0) < 1e-12
    assert prior.pmf(-1) == 0.0
    assert abs(prior.tail(4) - (1.0 - sum(prior.pmf(k) for k in range(5)))) < 1e-12
    with pytest.raises(DomainError):
        GeometricPrior(1.0, 0.1)


def test_change_point_draws_follow_prior():
    prior = GeometricPrior(0.3, 0.2)
    draws = draw_change_points(prior, np.random.default_rng(7), 50_000)
    assert abs(np.mean(draws == 0) - 0.3) < 0.01
    assert abs(np.mean(draws == 1) - prior.pmf(1)) < 0.01


def test_energy_model_validation():
    with pytest.raises(DomainError):
        EnergyModel(3, (0.5, 0.4))
    with pytest.raises(DomainError):
        EnergyModel(-1, (1.0,))
    with pytest.raises(DomainError):
        EnergyModel(2, (0.5, 0.5), initial=3)
    energy = EnergyModel(3, (0.85, 0.1, 0.03, 0.01, 0.01))
    assert energy.max_arrival == 4
    assert energy.p0 == 0.85
    assert abs(energy.mean_arrival - 0.23) < 1e-12


def test_trajectory_seed_is_deterministic():
    a = TrajectorySeed(12345, 7).generators()
    b = TrajectorySeed(12345, 7).generators()
    c = TrajectorySeed(12345, 8).generators()
    assert a.observation.random() == b.observation.random()
    assert a.change.random() != c.change.random()
    with pytest.raises(DomainError):
        TrajectorySeed(2 ** 64, 0)


def test_observation_stream_is_slot_indexed():
    pair = make_gaussian_pair(1.0, 0.0)
    every = ObservationStream(pair, 10, TrajectorySeed(3, 0).generators().observation, block=16)
    sparse = ObservationStream(pair, 10, TrajectorySeed(3, 0).generators().observation, block=16)
    values = [every.at(k) for k in range(1, 41)]
    assert sparse.at(5) == values[4]
    assert sparse.at(33) == values[32]
    assert sparse.llr_at(33) == pytest.approx(float(pair.log_likelihood_ratio(values[32])))
    with pytest.raises(DomainError):
        sparse.at(2)


def test_replenishment_stream_is_slot_indexed():
    energy = EnergyModel(3, (0.5, 0.3, 0.2))
    full = ReplenishmentStream(energy, TrajectorySeed(1, 2).generators().energy, block=8)
    jump = ReplenishmentStream(energy, TrajectorySeed(1, 2).generators().energy, block=8)
    arrivals = [full.at(k) for k in range(1, 21)]
    assert jump.at(19) == arrivals[18]
    assert set(arrivals) <= {0, 1, 2}
