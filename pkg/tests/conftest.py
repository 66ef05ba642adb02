import numpy as np
import pytest

from convexcip.carleman import FunctionalParams
from convexcip.grid import SpaceTimeGrid
from convexcip.inverse import MinimizerOptions, invert
from convexcip.phantoms import scenario
from convexcip.pipeline import cauchy_from_measurements, simulate, true_coefficient


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def g9():
    return SpaceTimeGrid(1.0, 2.0, 1.0, 9, 9)


@pytest.fixture(scope="session")
def test1_run():
    """The noiseless A-phantom Test 1 run shared by the slower end-to-end tests."""
    sc = scenario("test1_T1")
    sim = simulate(sc)
    grid = sc.inverse_grid()
    data = cauchy_from_measurements(sim.measurements, grid)
    params = FunctionalParams(sc.lam, sc.beta, sc.k, sc.t0)
    report = invert(data, params, MinimizerOptions(), c_true=true_coefficient(sc, grid))
    return sc, sim, data, params, report


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
