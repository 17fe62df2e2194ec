import numpy as np
import pytest

from exitgrid.benchmarks import builtin
from exitgrid.grid import build_grid, solve_value

_FIELDS: dict = {}


def solved(name: str, n) -> "object":
    """Solved field for a builtin, cached for the whole session."""
    b = builtin(name)
    n = tuple(n) if not isinstance(n, int) else (n,) * b.problem.d
    key = (name, n)
    if key not in _FIELDS:
        _FIELDS[key] = solve_value(b.problem, build_grid(b.problem.domain, n))
    return _FIELDS[key]


@pytest.fixture(scope="session")
def eik81():
    return solved("EIK64", 81)


@pytest.fixture(scope="session")
def eik161():
    return solved("EIK64", 161)


@pytest.fixture(scope="session")
def exa_coarse():
    return solved("EXA", (101, 86))


@pytest.fixture(scope="session")
def exa():
    return solved("EXA", (201, 171))


@pytest.fixture(scope="session")
def exb():
    return solved("EXB", (201, 101))


@pytest.fixture(scope="session")
def gen():
    return solved("GEN", 81)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
