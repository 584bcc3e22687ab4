import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from siglab.intersection import standard_eight_phase, toy_two_phase, utah_ten_phase
from siglab.simulator import DemandProfile, SimConstants, TrafficSim


@pytest.fixture(scope="session")
def layout8():
    return standard_eight_phase()


@pytest.fixture(scope="session")
def layout10():
    return utah_ten_phase()


@pytest.fixture(scope="session")
def toy_layout():
    return toy_two_phase()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_toy_sim(demand_rows=(), seed=0, **const_overrides):
    """A toy 2-phase simulator; demand_rows are (bin, movement, count)."""
    layout = toy_two_phase()
    constants = SimConstants(**const_overrides)
    demand = DemandProfile(tuple(demand_rows))
    sim = TrafficSim(layout, constants, demand)
    sim.reset(seed=seed)
    return sim


@pytest.fixture
def toy_sim_factory():
    return make_toy_sim
