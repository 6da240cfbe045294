import numpy as np
import pytest

from nhb.model import SystemParams, make_potential

# lines recorded by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def params():
    return SystemParams()


@pytest.fixture
def harmonic():
    return make_potential({"kind": "harmonic"})


@pytest.fixture
def double_well():
    return make_potential({"kind": "double_well", "c1": 0.25, "c2": 0.5})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
