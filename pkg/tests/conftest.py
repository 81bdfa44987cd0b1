import math

import numpy as np
import pytest

from shelab import _kernels
from shelab.grid import TorusGrid
from shelab.spectral import SpectralMeasure


@pytest.fixture
def grid():
    return TorusGrid(3, 16, 2 * math.pi)


@pytest.fixture
def unit_mu():
    return SpectralMeasure.unit_atoms(3, 1.0)


@pytest.fixture(params=_kernels.available())
def backend(request):
    prev = _kernels.set_backend(request.param)
    yield request.param
    _kernels.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(20261015)


_LINES = pytest.StashKey[list]()


@pytest.fixture
def report_line(request):
    """Record a one-line PASS/FAIL summary, echoed at the end of the session."""
    lines = request.config.stash.setdefault(_LINES, [])

    def record(line):
        lines.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
