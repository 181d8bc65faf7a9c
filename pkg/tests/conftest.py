import numpy as np
import pytest

from platevem.mesh import generate_structured, generate_voronoi

# One line per shipping criterion, echoed after the test summary so the
# verdicts stay visible regardless of output capturing.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def voronoi25():
    return generate_voronoi(25, lloyd_iters=5, seed=0)


@pytest.fixture(scope="session")
def grid4():
    return generate_structured(4, 4, perturb=0.2, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(20260817)
