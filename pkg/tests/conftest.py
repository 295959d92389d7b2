import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from progress_reward.rl_harness.env import PointMassEnv, generate_experts

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def reach_env():
    return PointMassEnv("reach")


@pytest.fixture(scope="session")
def reach_experts(reach_env):
    return generate_experts(reach_env, 12, seed=3)


@pytest.fixture(scope="session")
def pick_experts():
    return generate_experts(PointMassEnv("pick"), 8, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
