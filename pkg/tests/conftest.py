import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cuspbilliard.geometry import build_table

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def table():
    return build_table()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def wall_length_reference(beta, s):
    """Independent arclength by mpmath quadrature."""
    import mpmath

    with mpmath.workdps(30):
        return float(mpmath.quad(lambda t: mpmath.sqrt(1 + t ** (2 * beta - 2)), [0, s]))


PI = math.pi


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance") or __import__("sys").modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
