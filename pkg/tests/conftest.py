import numpy as np
import pytest

from clkinetic import clkernel, geometry


@pytest.fixture(scope="session")
def ball():
    return geometry.ConvexDomain.ball()


@pytest.fixture(scope="session")
def quartic():
    return geometry.quartic_test_domain()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def wall():
    return clkernel.WallModel(1.0, 0.5, 0.5)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    """Tests append (name, passed, detail); printed one line each at the end of the run."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_LINES:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
