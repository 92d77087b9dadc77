import numpy as np
import pytest

from slpoly.core import BoundaryProblem, Grid
from slpoly.forward import spectral_data
from slpoly.verify import random_corpus


@pytest.fixture(scope="session")
def neumann():
    return BoundaryProblem.build(0.0, [1.0], [0.0])


@pytest.fixture(scope="session")
def neumann_data(neumann):
    return spectral_data(neumann, 80)


@pytest.fixture(scope="session")
def linear_model():
    """sigma = 0 with r1 = lam + 2, r2 = 3 lam + 1."""
    return BoundaryProblem.build(0.0, [2.0, 1.0], [1.0, 3.0])


@pytest.fixture(scope="session")
def linear_model_data(linear_model):
    return spectral_data(linear_model, 40)


@pytest.fixture(scope="session")
def corpus():
    return random_corpus()


@pytest.fixture(scope="session")
def coarse_grid():
    return Grid(256)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[num])
