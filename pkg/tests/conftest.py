import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from srflow.dsl import VectorFieldExpr
from srflow.extremal import ControlSystem

settings.register_profile("srflow", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("srflow")

XYZ = ("x", "y", "z")


@pytest.fixture
def heis():
    Y = VectorFieldExpr.parse(["1", "0", "-y"], XYZ)
    Z = VectorFieldExpr.parse(["0", "1", "x"], XYZ)
    return ControlSystem(XYZ, [Y, Z], name="heisenberg", frame_names=["Y", "Z"])


@pytest.fixture
def martinet():
    X1 = VectorFieldExpr.parse(["1", "0", "0"], XYZ)
    X2 = VectorFieldExpr.parse(["0", "1", "x^2"], XYZ)
    return ControlSystem(XYZ, [X1, X2], name="martinet")


@pytest.fixture
def flat2():
    c = ("x", "y")
    return ControlSystem(c, [VectorFieldExpr.parse(["1", "0"], c), VectorFieldExpr.parse(["0", "1"], c)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
