import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vidacc.model import reference, reference_constants

settings.register_profile(
    "vidacc",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("vidacc")

# filled by the acceptance tests, printed once at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def reference_sets():
    return reference_constants()


@pytest.fixture
def honda_rec_q():
    return reference("qrmoda", "honda_ucsd", "recognition")


@pytest.fixture
def honda_rec_b():
    return reference("brmoda", "honda_ucsd", "recognition")


@pytest.fixture
def disfa_rec_b():
    return reference("brmoda", "disfa", "recognition")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
