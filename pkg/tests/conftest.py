import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mane_lab import build_system

settings.register_profile(
    "repo",
    deadline=None,
    derandomize=True,
    max_examples=30,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("repo")

ALL = ("flat", "heisenberg", "psl2r", "open_plane")


@pytest.fixture(scope="session")
def systems():
    return {name: build_system(name) for name in ALL}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
