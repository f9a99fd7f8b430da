import numpy as np
import pytest

from delaylab.systems import sample_self_similar, sample_srb


@pytest.fixture(scope="session")
def srb_cloud():
    return sample_srb(100_000, 1000, 0)


@pytest.fixture(scope="session")
def corner_cloud():
    return sample_self_similar(100_000, 1.0 / 3.0, 0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
