from pathlib import Path

import numpy as np
import pytest

from mcsos.model import make_instance, parse_instance
from mcsos.sdpcore import SdpBuilder, SolverOptions

DATA = Path(__file__).parent
WORKED_TRUTH = np.array([-5.0, 3.0, 7.0, 3.0, -2.0])


def worked_example():
    return parse_instance((DATA / "worked3x3.json").read_bytes())


def single_y1():
    """y_1 = 4 on a 1 x 1 matrix."""
    return make_instance(1, 1, [([(1, 1, 1.0)], 4.0)], truth=[4.0], label="y1")


def trivial_min():
    """min <I, X> s.t. X_11 = 1, X in PSD(2)."""
    b = SdpBuilder()
    k = b.add_block("psd", 2)
    r = b.add_constraint(1.0)
    b.add_entries(k, [r], [0], [0], 1.0)
    b.set_cost(k, 0, 0, 1.0)
    b.set_cost(k, 1, 1, 1.0)
    return b.build("min")


def trivial_max():
    """max rho s.t. diag(1 - rho, 2 - rho) PSD, written as X + rho I = diag(1, 2)."""
    b = SdpBuilder()
    k = b.add_block("psd", 2)
    f = b.add_block("free", 1)
    r = b.add_constraints([1.0, 2.0, 0.0])
    b.add_entries(k, r[:2], [0, 1], [0, 1], 1.0)
    b.add_entries(k, [r[2]], [0], [1], 1.0)
    b.add_entries(f, r[:2], [0, 0], None, 1.0)
    b.set_cost(f, 0, None, 1.0)
    return b.build("max")


TIGHT = SolverOptions(gap_tol=1e-12, feas_tol=1e-12)


@pytest.fixture
def worked():
    return worked_example()


@pytest.fixture
def tiny():
    return single_y1()


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
