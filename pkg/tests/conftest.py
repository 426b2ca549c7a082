import numpy as np
import pytest

from etcsim.scenario import load_scenario
from etcsim.simulate import simulate

# criterion number -> PASS/FAIL line, filled by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def worked():
    return load_scenario("worked_example")


@pytest.fixture(scope="session")
def worked_dc(worked):
    return worked.design()


@pytest.fixture(scope="session")
def osc():
    return load_scenario("oscillator")


@pytest.fixture(scope="session")
def osc_dc(osc):
    return osc.design()


@pytest.fixture(scope="session")
def worked_short_run(worked, worked_dc):
    """Worked example over 60 time units (one persistence cycle plus several events)."""
    return simulate(worked.plant, worked_dc, worked.sim_config(t_end=60.0))


@pytest.fixture(scope="session")
def osc_run(osc, osc_dc):
    return simulate(osc.plant, osc_dc, osc.sim_config())


def random_stable(rng, n, shift=0.5):
    """Random Hurwitz matrix with spectral abscissa -shift."""
    M = rng.normal(size=(n, n))
    return M - (np.max(np.linalg.eigvals(M).real) + shift) * np.eye(n)
