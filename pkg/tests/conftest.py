import numpy as np
import pytest

from wrinkle.grids import make_k_grid, make_x_grid
from wrinkle.limit_solver import SolverConfig, minimize_F_infty
from wrinkle.measure import MeasureTable

ACCEPTANCE = {}


def random_feasible(xgrid, kgrid, rng, low=0.1):
    w = rng.uniform(low, 1.0, size=(xgrid.n, len(kgrid)))
    return MeasureTable(xgrid, kgrid, 2.0 * xgrid.nodes[:, None] * w / w.sum(axis=1, keepdims=True))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def golden():
    """Desk-scale minimizer: 200 nodes on [0, 1], |k| <= 12 on the comb pi/8."""
    return minimize_F_infty(SolverConfig())


@pytest.fixture
def small_grids():
    return make_x_grid(40), make_k_grid(2.0, 3 * np.pi)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda s: (int(s.split(".")[0].rstrip("abcd")), s)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
