import os
import sys

import pytest

sys.path.append(os.path.join(os.path.dirname(__file__), '..', '..', 'backend'))

from limited_policy import PolicyGrid  # noqa: E402
from model import ChangeModel, EnergyModel, GeometricPrior, make_gaussian_pair  # noqa: E402
from quadrature import QuadratureConfig  # noqa: E402

HARVEST_PMF = (0.85, 0.1, 0.03, 0.01, 0.01)


def acceptance_trials(default=20_000):
    return int(os.getenv('QCD_ACCEPTANCE_TRIALS', default))


@pytest.fixture
def pair_0db():
    return make_gaussian_pair(1.0, 0.0)


@pytest.fixture
def model_0db(pair_0db):
    return ChangeModel(GeometricPrior(0.0, 0.1), pair_0db)


@pytest.fixture
def small_grid():
    return PolicyGrid(201)


@pytest.fixture
def quad():
    return QuadratureConfig()


@pytest.fixture
def harvest_energy():
    return EnergyModel(3, HARVEST_PMF)
