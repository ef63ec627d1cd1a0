import itertools

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def all_labelings(n, c):
    """Every labeling of ``n`` pixels with labels 0..c-1, as an (c**n, n) array."""
    return np.array(list(itertools.product(range(c), repeat=n)), dtype=np.int64)


def brute_energies(costs, pi, pj, beta):
    """Energies ``sum unary - beta * #equal`` of every labeling (0-based costs table)."""
    n, c = costs.shape
    labs = all_labelings(n, c)
    un = costs[np.arange(n)[None, :], labs].sum(axis=1)
    eq = (labs[:, pi] == labs[:, pj]).sum(axis=1)
    return labs, un - beta * eq


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    def record(number, ok, detail):
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(ACCEPTANCE_LINES[-1])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
