import os

import numpy as np
import pytest

os.environ.setdefault("HMCONTROL_QUIET", "1")

from hmcontrol import logs  # noqa: E402
from hmcontrol.grid import Grid  # noqa: E402


@pytest.fixture(autouse=True)
def _no_event_file():
    logs.configure(log_file=None, quiet=True)
    yield
    logs.configure(log_file=None)


@pytest.fixture
def grid1d() -> Grid:
    return Grid.build([1.0], [41])


@pytest.fixture
def grid2d() -> Grid:
    return Grid.build([1.0, 1.0], [21, 21])


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
