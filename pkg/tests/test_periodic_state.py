import numpy as np
import pytest

from floquet_layer.config import ForceSpec, Params, build_force
from floquet_layer.periodic_state import (
    ConvergenceError,
    Marcher,
    NonlinearSystem,
    PeriodicState,
    PositivityError,
    energy_report,
    force_on_interior,
    residual,
    solve_periodic_state,
    stationary_initializer,
    step_nonlinear,
)

PARAMS = Params(10, 10, 40)


@pytest.fixture(scope="module")
def force(small_grid):
    return build_force(ForceSpec.default(2), small_grid, 16)


@pytest.fixture(scope="module")
def force_int(small_grid, force):
    return force_on_interior(small_grid, force.samples)


def _small_random(grid, rng, scale=1e-3):
    u = scale * rng.standard_normal(grid.n_dof)
    phi, w = grid.blocks(u)
    return grid.pack(phi - grid.mean(phi), w)


def test_zero_force_keeps_equilibrium(small_grid):
    m = Marcher(NonlinearSystem(PARAMS, small_grid, None), 1e-3)
    u = np.zeros(small_grid.n_dof)
    for k in range(100):
        u = m.step(u, k * 1e-3)
    assert not np.any(u)
    s = solve_periodic_state(PARAMS, small_grid, None, n_t=8)
    assert s.is_trivial
    assert np.abs(s.rho - 1).max() == 0 and np.abs(s.v).max() == 0


def test_marching_conserves_mass_and_damps(small_grid, rng):
    g = small_grid
    m = Marcher(NonlinearSystem(PARAMS, g, None), 1.0 / 64)
    u = _small_random(g, rng)
    e0 = g.norm_gamma_sq(u, PARAMS.gamma)
    for k in range(64):
        u = m.step(u, k / 64)
        assert abs(g.mean(g.blocks(u)[0])) < 1e-14
    assert g.norm_gamma_sq(u, PARAMS.gamma) < 0.5 * e0
    m.reset()
    assert m.prev_n is None
    with pytest.raises(ValueError):
        Marcher(m.sys, 0.1, "rk4")


def test_single_step_helper_matches_marcher(small_grid, force_int, rng):
    g = small_grid
    p = PARAMS.with_force(1e-3)
    u = _small_random(g, rng)
    m = Marcher(NonlinearSystem(p, g, force_int), 0.01)
    np.testing.assert_allclose(step_nonlinear(u, 0.3, 0.01, p, g, force_int), m.step(u, 0.3), atol=1e-15)


def test_initializer_linear_problem(small_grid, force_int):
    g = small_grid
    p = PARAMS.with_force(1e-3)
    sys_ = NonlinearSystem(p, g, force_int)
    u = stationary_initializer(p, g, force_int, quadratic=False)
    _, w = g.blocks(u)
    np.testing.assert_allclose(sys_.lame @ w.ravel(), p.S_force * sys_.force_at(0.0).ravel(), atol=1e-12)
    u2 = stationary_initializer(PARAMS.with_force(2e-3), g, force_int, quadratic=False)
    np.testing.assert_allclose(u2, 2 * u, atol=1e-15)
    assert not np.any(stationary_initializer(PARAMS, g, force_int))


def test_initializer_quadratic_correction_is_small(small_grid, force_int):
    g = small_grid
    lin = stationary_initializer(PARAMS.with_force(1e-2), g, force_int, quadratic=False)
    full = stationary_initializer(PARAMS.with_force(1e-2), g, force_int)
    rel = np.abs(full - lin).max() / np.abs(lin).max()
    assert 0 < rel < 1e-3


def test_initializer_rejects_huge_force(small_grid, force_int):
    with pytest.raises(ConvergenceError, match="contraction regime"):
        stationary_initializer(PARAMS.with_force(1e8), small_grid, force_int)


def test_pressure_forms_agree(small_grid, force_int, rng):
    g = small_grid
    sys_ = NonlinearSystem(PARAMS.with_force(1e-3), g, force_int)
    u = 10 * _small_random(g, rng, scale=1.0)
    a = sys_.nonlinear(u, 0.2)
    b = sys_.nonlinear_kernel_form(u, 0.2)
    np.testing.assert_allclose(a, b, atol=1e-10 * np.abs(a).max())


def test_positivity_guard(small_grid):
    g = small_grid
    sys_ = NonlinearSystem(PARAMS, g, None)
    u = np.zeros(g.n_dof)
    u[0] = -2 * PARAMS.gamma**2
    with pytest.raises(PositivityError):
        sys_.nonlinear(u, 0.0)
    bad = PeriodicState(g, PARAMS, np.full((4, g.n_int), -2 * PARAMS.gamma**2), np.zeros((4, 2, g.n_int)))
    with pytest.raises(PositivityError):
        bad.coefficients(index=0)


def test_solver_argument_checks(small_grid, force):
    with pytest.raises(ValueError, match="power of two"):
        solve_periodic_state(PARAMS, small_grid, force.samples, n_t=12)
    with pytest.raises(ConvergenceError) as err:
        solve_periodic_state(PARAMS.with_force(1e-3), small_grid, force.samples, n_t=16, tol=1e-15,
                             max_periods=3)
    assert len(err.value.history) == 3


def test_computed_state_residual(small_state, force):
    s = small_state
    rep = residual(s, force.samples)
    scale = s.params.S_force * np.sqrt(s.grid.volume)
    assert rep.mean_defect < 1e-10
    assert rep.mass < 1e-6 * scale
    assert rep.momentum < 1e-3 * scale
    assert rep.periodicity_defect < 1e-11
    assert set(rep.as_dict()) == {"mass", "momentum", "mean_defect", "wall_defect", "periodicity_defect"}
    assert np.all(s.contraction[-5:] < np.array(0.7))


def test_linear_response_in_force(small_grid, force, small_state):
    half = solve_periodic_state(small_state.params.with_force(small_state.params.S_force / 2), small_grid,
                                force.samples, n_t=16, tol=1e-12)
    rel = np.abs(small_state.w - 2 * half.w).max() / np.abs(small_state.w).max()
    assert rel < 1e-3


def test_time_shift_consistency(small_state, small_grid, force):
    s = small_state
    shifted = solve_periodic_state(s.params, small_grid, force.samples, n_t=16, tol=1e-12, t_start=0.25)
    np.testing.assert_allclose(shifted.w, np.roll(s.w, -4, axis=0), atol=1e-9 * np.abs(s.w).max())


def test_schemes_agree(small_state, small_grid, force):
    other = solve_periodic_state(small_state.params, small_grid, force.samples, n_t=16, tol=1e-12,
                                 scheme="sbdf2")
    rel = np.abs(other.w - small_state.w).max() / np.abs(small_state.w).max()
    assert rel < 1e-2


def test_energy_report(small_grid, small_state):
    zero = energy_report(PeriodicState.trivial(small_grid, PARAMS, n_t=8))
    assert np.all(zero.E2 == 0) and zero.D4 == 0
    rep = energy_report(small_state)
    assert np.all(rep.E2 <= rep.E4 * (1 + 1e-12))
    assert rep.D2 <= rep.D4 * (1 + 1e-12)
    assert len(list(rep.rows())) == small_state.n_t
    with pytest.raises(ValueError, match="time resolution"):
        energy_report(PeriodicState.trivial(small_grid, PARAMS, n_t=4))
