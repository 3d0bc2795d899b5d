import numpy as np
import pytest

from wdmcap.coeffs import CoefficientTable, compute_coefficient_table
from wdmcap.config import SystemConfig, reference_link


@pytest.fixture(scope="session")
def link():
    return reference_link()


@pytest.fixture(scope="session")
def link_table(link):
    """Reference-link coefficients, computed once per test session (~20 s)."""
    return compute_coefficient_table(link)


@pytest.fixture
def small_config():
    """Short link on a coarse grid; cheap enough for per-test quadrature."""
    return SystemConfig(span_length=20.0, memory=2, samples_per_symbol=4,
                        time_window_symbols=256, z_steps=40, rolloff=0.5)


def random_table(num_users, memory, rng, scale=1.0):
    """Coefficient table with random nonnegative entries (zero diagonal)."""
    size = 2 * memory + 1
    c = scale * rng.random((num_users, num_users, size))
    for k in range(num_users):
        c[k, k] = 0.0
    return CoefficientTable(c, np.zeros_like(c, dtype=complex), memory, 1.0)


# One line per acceptance criterion, echoed in the terminal summary so the
# verdicts survive output capture.
ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    def _report(criterion, passed, detail):
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
