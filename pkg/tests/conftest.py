from __future__ import annotations

import numpy as np
import pytest

from splitsde import LorenzModel, OUModel, simulate_em_fine


@pytest.fixture(scope="session")
def lorenz():
    return LorenzModel()


@pytest.fixture(scope="session")
def lorenz_theta(lorenz):
    return lorenz.default_theta


@pytest.fixture(scope="session")
def ou():
    return OUModel()


@pytest.fixture(scope="session")
def lorenz_seed42(lorenz, lorenz_theta):
    """Short Lorenz trajectory shared by the reference-value checks."""
    return simulate_em_fine(lorenz, lorenz_theta, np.ones(3), 0.01, 100, oversample=100, seed=42,
                            burn_in=10.0)


@pytest.fixture(scope="session")
def lorenz_long(lorenz, lorenz_theta):
    return simulate_em_fine(lorenz, lorenz_theta, np.ones(3), 0.01, 5000, oversample=100, seed=42,
                            stream=1, burn_in=10.0)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
