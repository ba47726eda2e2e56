import numpy as np
import pytest

from ergobound.bridge import TimeGrid, build_bridge_kernel
from ergobound.presets import cubic, oscillator, scalar1

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def s1():
    return scalar1()


@pytest.fixture(scope="session")
def s1lin():
    """SCALAR1 with G(x) = -x, i.e. total drift -2x."""
    return scalar1(feedback=-1.0)


@pytest.fixture(scope="session")
def cub():
    return cubic()


@pytest.fixture(scope="session")
def osc():
    return oscillator()


@pytest.fixture(scope="session")
def s1_kernel(s1):
    return build_bridge_kernel(s1[0])


@pytest.fixture(scope="session")
def osc_kernel(osc):
    return build_bridge_kernel(osc[0])


@pytest.fixture(scope="session")
def coarse_grid():
    """Nodes 0, 0.1, ..., 0.9, 1."""
    return TimeGrid(M=10, eps_end=0.1)


@pytest.fixture
def record():
    """Record one acceptance line; all lines are repeated in the terminal summary."""
    def _record(number: int, ok: bool, detail: str):
        line = f"ACCEPTANCE {number:>2}: {'PASS' if ok else 'FAIL'} - {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)


def rel_err(a, b):
    return np.abs(np.asarray(a) - np.asarray(b)) / np.abs(np.asarray(b))
