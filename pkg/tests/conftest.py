import numpy as np
import pytest

from blockop.gridspace import make_grid
from blockop.modelzoo import beris_edwards_delta


@pytest.fixture
def grid16():
    return make_grid(1, 16)


@pytest.fixture
def be16(grid16):
    return beris_edwards_delta(grid16)


def admissible_lambdas(rng, count, scale=1.0, psi=np.pi / 2):
    th = rng.uniform(psi, np.pi, count) * rng.choice((-1, 1), count)
    return scale * 10 ** rng.uniform(-2, 2, count) * np.exp(1j * th)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
