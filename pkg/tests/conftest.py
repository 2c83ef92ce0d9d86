import math

import pytest
from hypothesis import settings

from torusmin.geometry.grid import Grid
from torusmin.geometry.metric import MetricField

settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")

BUMPY = [[1, 0, 0.15, 0.0], [0, 1, 0.0, 0.1], [1, 1, 0.05, 0.0]]
COS1 = [[1, 0, 0.3, 0.0]]
# 0.3 cos(2 pi x1) cos(2 pi x2) = 0.15 cos(2 pi (x1 + x2)) + 0.15 cos(2 pi (x1 - x2))
CROSS = [[1, 1, 0.15, 0.0], [1, -1, 0.15, 0.0]]


@pytest.fixture(scope="session")
def flat():
    return MetricField.flat()


@pytest.fixture(scope="session")
def cos1():
    return MetricField.conformal(COS1)


@pytest.fixture(scope="session")
def bumpy():
    return MetricField.conformal(BUMPY)


@pytest.fixture(scope="session")
def cross():
    return MetricField.conformal(CROSS)


@pytest.fixture(scope="session")
def flat_grid(flat):
    return Grid(flat, 256, halfwidth=60.0)


@pytest.fixture(scope="session")
def cos1_grid(cos1):
    return Grid(cos1, 256, halfwidth=60.0)


@pytest.fixture(scope="session")
def bumpy_grid(bumpy):
    return Grid(bumpy, 256, halfwidth=250.0)


@pytest.fixture(scope="session")
def cross_grid(cross):
    return Grid(cross, 256, halfwidth=120.0)


def straight_length_cos1(a=0.3, n=20000):
    """Midpoint quadrature of exp(a cos(2 pi t)) over one period."""
    return sum(math.exp(a * math.cos(2 * math.pi * (k + 0.5) / n)) for k in range(n)) / n


# one "ACCEPTANCE n PASS|FAIL ..." line per criterion, echoed after the run
ACCEPTANCE_LINES = []


def record_acceptance(n: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
