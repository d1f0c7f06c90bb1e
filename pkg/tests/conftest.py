import numpy as np
import pytest

from monomfg.grid import make_grid


@pytest.fixture
def grid64():
    return make_grid(1, 64)


@pytest.fixture
def grid2d():
    return make_grid(2, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
