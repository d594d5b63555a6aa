import copy

import numpy as np
import pytest

from skeltrack.scenario import build_scenario, default_scenario_config
from skeltrack.simulation import SimSettings, Simulator, antenna_preset


def open_field(length=30.0, grid_size=3.0, **extra):
    """BS 20 m off a straight walk, no buildings, no blockers."""
    cfg = {
        "name": "open-field",
        "bs": {"position": [0.0, 20.0], "height": 6.0, "boresight_deg": -90.0},
        "ue": {"height": 1.5, "boresight_deg": 90.0},
        "trajectory": {"points": [[-length / 2, 0.0], [length / 2, 0.0]], "grid_size": grid_size},
    }
    cfg.update(extra)
    return cfg


@pytest.fixture
def open_field_config():
    return open_field()


@pytest.fixture(scope="session")
def default_config():
    return default_scenario_config()


@pytest.fixture
def default_config_copy(default_config):
    return copy.deepcopy(default_config)


@pytest.fixture(scope="session")
def narrow_sim(default_config):
    return Simulator(build_scenario(default_config), antenna_preset("narrow"),
                     SimSettings(relative_distance=True), world_cache=512)


@pytest.fixture(scope="session")
def wide_sim(default_config):
    return Simulator(build_scenario(default_config), antenna_preset("wide"),
                     SimSettings(relative_distance=True), world_cache=512)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
