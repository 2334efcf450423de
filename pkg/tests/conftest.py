import numpy as np
import pytest

from esbgk.grid import build_grid

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def fine_grid():
    # one spatial cell block, fine velocity grid for quadrature oracles
    return build_grid(1, 1.0, 4, 8.0, 48)


@pytest.fixture(scope="session")
def small_grid():
    return build_grid(1, 2 * np.pi, 16, 6.0, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
