import numpy as np
import pytest

from metattr.data import make_task
from metattr.grid import GridSpec
from metattr.models import ClassifierHead, PatchEncoder, TargetModel


@pytest.fixture(scope="session")
def grid():
    return GridSpec()


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec(W=8, C=2, P=4, hop_radius=1)


@pytest.fixture(scope="session")
def images(grid):
    return make_task("quadrant", 6, grid, seed=11, split="test").images


@pytest.fixture(scope="session")
def encoder(grid):
    return PatchEncoder(grid, seed=0).set_trainable(False)


@pytest.fixture(scope="session")
def head():
    return ClassifierHead(16, 4, seed=1).set_trainable(False)


@pytest.fixture(scope="session")
def target(encoder, head):
    return TargetModel(encoder, head)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
