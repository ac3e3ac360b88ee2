"""Shared fixtures: the checked-in reference gain schedule and the
calibrated simulation vehicle."""

from pathlib import Path

import pytest

from zonotube.scheduling import load_gains
from zonotube.vehicle import LpvModel, simulation_params

GAINS_PATH = Path(__file__).resolve().parents[1] / "src" / "zonotube" / \
    "data" / "reference_gains.json"


@pytest.fixture(scope="session")
def sim_vehicle():
    return simulation_params()


@pytest.fixture(scope="session")
def design_model(sim_vehicle):
    return LpvModel(sim_vehicle)


@pytest.fixture(scope="session")
def reference_gains():
    return load_gains(GAINS_PATH)
