import numpy as np
import pytest

from lagfol.dsl import SymbolFamily
from lagfol.symplectic import SymplecticChart


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)


@pytest.fixture
def std1():
    return SymplecticChart.standard(1)


@pytest.fixture
def std2():
    return SymplecticChart.standard(2)


@pytest.fixture
def disk():
    return SymplecticChart.bergman_disk(radius=0.99, c=2.0)


@pytest.fixture
def torus_family():
    return SymbolFamily.parse({"I1": "x1^2 + y1^2", "I2": "x2^2 + y2^2"}, 2)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
