"""Shared fixtures.  Expensive objects (computed periodic states) are built once per session."""

from __future__ import annotations

import numpy as np
import pytest

import fields

from floquet_layer.config import ForceSpec, Params, build_force, regime_threshold
from floquet_layer.grid import CellGrid
from floquet_layer.periodic_state import PeriodicState, solve_periodic_state

DESK = dict(nu=10.0, nu_tilde=10.0, gamma=40.0)

ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def desk_params() -> Params:
    return Params(**DESK)


@pytest.fixture(scope="session")
def desk_grid(desk_params) -> CellGrid:
    return CellGrid(desk_params.alpha, 17, 17)


@pytest.fixture(scope="session")
def small_grid() -> CellGrid:
    return CellGrid((0.21,), 9, 9)


@pytest.fixture(scope="session")
def threshold() -> float:
    return regime_threshold(DESK["nu"], DESK["nu_tilde"], DESK["gamma"])


@pytest.fixture(scope="session")
def desk_force(desk_grid):
    return build_force(ForceSpec.default(2), desk_grid, 64)


@pytest.fixture(scope="session")
def computed_state(desk_params, desk_grid, desk_force, threshold) -> PeriodicState:
    """Desk-scale state with the force at half the regime threshold."""
    return solve_periodic_state(desk_params.with_force(0.5 * threshold), desk_grid, desk_force.samples,
                                n_t=64, tol=1e-12)


@pytest.fixture(scope="session")
def computed_state_quarter(desk_params, desk_grid, desk_force, threshold, computed_state) -> PeriodicState:
    return solve_periodic_state(desk_params.with_force(0.25 * threshold), desk_grid, desk_force.samples,
                                n_t=64, tol=1e-12)


@pytest.fixture(scope="session")
def trivial_state(desk_params, desk_grid) -> PeriodicState:
    return PeriodicState.trivial(desk_grid, desk_params, n_t=16)


@pytest.fixture(scope="session")
def synthetic_state(small_grid) -> PeriodicState:
    return fields.synthetic_state(small_grid)


@pytest.fixture(scope="session")
def small_state(small_grid, threshold) -> PeriodicState:
    """Computed state on the coarse grid; the force is strong enough for visible coefficients."""
    force = build_force(ForceSpec.default(2), small_grid, 16)
    params = Params(**DESK).with_force(200 * threshold)
    return solve_periodic_state(params, small_grid, force.samples, n_t=16, tol=1e-12)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
