import numpy as np
import pytest

from awh_lab import fixtures
from awh_lab.awh import default_box
from awh_lab.model import uniform_rho


@pytest.fixture(scope="session")
def dw():
    return fixtures.double_well()


@pytest.fixture(scope="session")
def dw_rho(dw):
    return uniform_rho(dw.n_lambda)


@pytest.fixture(scope="session")
def dw_box(dw, dw_rho):
    return default_box(dw, dw_rho)


@pytest.fixture(scope="session")
def tiny():
    return fixtures.tiny()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
