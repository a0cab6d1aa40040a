import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from calderon_lab.domain import build_box

settings.register_profile("lab", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("lab")


@pytest.fixture(scope="session")
def box8():
    return build_box((0, 0, -1), (1, 1, 0), 8)


@pytest.fixture(scope="session")
def box16():
    return build_box((0, 0, -1), (1, 1, 0), 16)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s[7:9])):
            terminalreporter.write_line(line)
