import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spectral_fio.hamiltonian import PotentialModel, SystemConfig
from spectral_fio.relations import CutoffFunction

settings.register_profile(
    "numerics", deadline=None, max_examples=25, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.load_profile("numerics")


@pytest.fixture(scope="session")
def free_sys():
    return SystemConfig(1, 1.0, 0.5, PotentialModel.zero())


@pytest.fixture(scope="session")
def free_sys_2d():
    return SystemConfig(2, 1.0, 0.5, PotentialModel.zero())


@pytest.fixture(scope="session")
def bump_sys():
    return SystemConfig(1, 1.5, 0.5, PotentialModel.gaussian([[0.0]], [0.3], [1.0]))


@pytest.fixture(scope="session")
def bump_sys_2d():
    return SystemConfig(2, 1.5, 0.5, PotentialModel.gaussian([[0.0, 0.0]], [0.3], [1.0]))


@pytest.fixture(scope="session")
def trap_sys():
    return SystemConfig(1, 3.5, 0.5, PotentialModel.gaussian([[-2.0], [2.0]], [1.0, 1.0], [1.0, 1.0]))


@pytest.fixture(scope="session")
def cutoffs_1d():
    return CutoffFunction((-3.0,), 0.5, 1.0), CutoffFunction((3.0,), 0.5, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one summary line per acceptance criterion."""
    return request.config.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
