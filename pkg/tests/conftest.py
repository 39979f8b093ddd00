import numpy as np
import pytest

from engine.forms import FormsEngine, make_Q0
from engine.generators import uniform_random
from shared.entities.dyadic import DyadicInterval, GridConfig
from shared.entities.measure import AtomicMeasure, MeasurePair


@pytest.fixture
def cfg():
    """Smallest depth with room for deep containment at r = 5."""
    return GridConfig(K=10, r=5, eps=0.45)


@pytest.fixture
def small_cfg():
    return GridConfig(K=8, r=5, eps=0.45)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def make_pair(cfg):
    def build(sigma_atoms, w_atoms, grid=None):
        grid = grid or cfg
        return MeasurePair(AtomicMeasure.from_atoms(grid.K, sigma_atoms),
                           AtomicMeasure.from_atoms(grid.K, w_atoms), grid)
    return build


@pytest.fixture
def random_pair(cfg, rng):
    return uniform_random(cfg, rng, atoms=16)


@pytest.fixture
def one_pair(make_pair):
    """w splits only at [10/32, 11/32), so Q0 is the single pair ([0,1), [10/32, 11/32))."""
    return make_pair([(100, 1.0), (700, 2.0), (900, 0.5)], [(330, 1.0), (340, 3.0)])


@pytest.fixture
def one_pair_engine(one_pair):
    return FormsEngine(one_pair)


@pytest.fixture
def one_pair_q0(one_pair):
    return make_Q0(one_pair, DyadicInterval.unit(), [])
