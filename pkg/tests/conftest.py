from pathlib import Path

import pytest

from funnelloop.dynamics import BicycleModel, TrackingController
from funnelloop.funnels import FunnelConfig, build_library

ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture(scope="session")
def funnel_library():
    model = BicycleModel()
    return build_library(model, TrackingController(model), FunnelConfig(), seed=0)


@pytest.fixture(scope="session")
def scenario_dir():
    return ROOT / "scenarios"


@pytest.fixture(scope="session")
def maps_dir():
    return ROOT / "maps"
