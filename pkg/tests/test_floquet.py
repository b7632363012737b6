import numpy as np
import pytest
import scipy.linalg as sla

from floquet_layer.config import Params
from floquet_layer.floquet import (
    PeriodicSolver,
    SimplicityError,
    decay_rate,
    eigenfunction_u0,
    eigenfunction_u_eta,
    leading_exponent,
    monodromy,
    periodic_linear_solve,
    propagate,
    propagator_matrix,
    u0_size,
)
from floquet_layer.grid import CellGrid, time_derivative
from floquet_layer.operators import apply_time_dependent, assemble_L
from floquet_layer.periodic_state import PeriodicState

from fields import synthetic_state


@pytest.fixture(scope="module")
def trivial_small(small_grid):
    return PeriodicState.trivial(small_grid, Params(10, 10, 40), n_t=8)


def test_trivial_propagator_is_matrix_exponential(trivial_small):
    L = assemble_L(trivial_small, index=0, eta_prime=(0.05,)).matrix
    U = propagator_matrix((0.05,), 0.0, 0.3, trivial_small)
    np.testing.assert_allclose(U, sla.expm(-0.3 * L), atol=1e-12)
    np.testing.assert_array_equal(propagator_matrix(None, 0.2, 0.2, trivial_small),
                                  np.eye(trivial_small.grid.n_dof))
    with pytest.raises(ValueError):
        propagator_matrix(None, 0.5, 0.2, trivial_small)


def test_propagation_is_linear_and_composes(synthetic_state, rng):
    s = synthetic_state
    n = s.grid.n_dof
    a, b = rng.standard_normal(n) + 0j, rng.standard_normal(n) + 0j
    ua = propagate(None, a, 0.0, 1.0, s, steps_per_period=8)
    ub = propagate(None, b, 0.0, 1.0, s, steps_per_period=8)
    np.testing.assert_allclose(propagate(None, 2 * a - 3j * b, 0.0, 1.0, s, 8), 2 * ua - 3j * ub,
                               atol=1e-10 * np.abs(ua).max())
    half = propagator_matrix(None, 0.0, 0.5, s, 8)
    rest = propagator_matrix(None, 0.5, 1.0, s, 8)
    full = propagator_matrix(None, 0.0, 1.0, s, 8)
    np.testing.assert_allclose(rest @ half, full, atol=1e-10 * np.abs(full).max())


def test_magnus_fourth_order():
    # a non-stiff configuration; on the desk grids |h L| is large and the observed order drops
    s = synthetic_state(CellGrid((0.21,), 3, 5), Params(0.05, 0.05, 1.0))
    U = {m: propagator_matrix((0.02,), 0.0, 1.0, s, m) for m in (2, 4, 8, 16, 256)}
    err = np.array([np.abs(U[m] - U[256]).max() for m in (2, 4, 8, 16)])
    assert np.all(np.log2(err[:-1] / err[1:]) > 3.7)


def test_magnus_converges_on_stiff_grid(synthetic_state):
    U = {m: propagator_matrix((0.02,), 0.0, 1.0, synthetic_state, m) for m in (8, 16, 32, 128)}
    err = [np.abs(U[m] - U[128]).max() for m in (8, 16, 32)]
    assert err[0] > err[1] > err[2]
    assert err[1] < 1e-4


def test_trivial_monodromy_matches_dense_spectrum(trivial_small):
    for eta in (0.0, 0.1):
        res = monodromy((eta,), trivial_small)
        lam = np.linalg.eigvals(assemble_L(trivial_small, index=0, eta_prime=(eta,)).matrix)
        ref = np.exp(-lam)
        ref = ref[np.argsort(-np.abs(ref))][:10]
        np.testing.assert_allclose(np.abs(res.multipliers[:10]), np.abs(ref), rtol=1e-10, atol=1e-14)
        assert np.all(np.diff(np.abs(res.multipliers)) <= 0)
    assert monodromy(0.0, trivial_small).multipliers[0] == pytest.approx(1.0, abs=1e-11)


def test_exponents_conjugate_under_eta_reflection(synthetic_state):
    s = synthetic_state
    a = monodromy((0.03,), s, 8)
    b = monodromy((-0.03,), s, 8)
    np.testing.assert_allclose(b.exponents[:5], np.conj(a.exponents[:5]), atol=1e-9)


def test_leading_exponent_enforces_simplicity(trivial_small):
    res = monodromy((0.02,), trivial_small)
    lam, diag = leading_exponent(res)
    assert lam == pytest.approx(res.exponents[0])
    assert diag["max_nonleading"] == pytest.approx(abs(res.multipliers[1]))
    with pytest.raises(SimplicityError) as err:
        leading_exponent(res, min_ratio=1e6)
    assert err.value.mu1 == res.multipliers[0]


def test_periodic_solve_zero_and_residual(small_state, rng):
    s = small_state
    g = s.grid
    assert not np.any(periodic_linear_solve(np.zeros((s.n_t, g.n_dof)), s))
    F = rng.standard_normal((s.n_t, g.n_dof)) + 0j
    F = band_limit(F)
    phi, _ = g.blocks(F)
    F[:, : g.n_int] -= g.mean(phi).mean()
    out = periodic_linear_solve(F, s, return_info=True)
    r = time_derivative(out.u, 1) + apply_time_dependent(s, out.u) - F
    assert np.linalg.norm(r) < 1e-10 * np.linalg.norm(F)
    assert abs(np.mean(g.mean(g.blocks(out.u)[0]))) < 1e-12
    # the density mean follows d_t <phi> = <f>
    np.testing.assert_allclose(time_derivative(out.mean_phi, 1), g.mean(g.blocks(F)[0]), atol=1e-10)
    with pytest.raises(ValueError, match="nonzero space-time density mean"):
        periodic_linear_solve(F + 1.0, s)
    with pytest.raises(ValueError, match="shape"):
        periodic_linear_solve(F[:3], s)


def band_limit(F):
    """Remove the Nyquist time mode, whose collocation derivative symbol is zero."""
    Fh = np.fft.fft(F, axis=0)
    Fh[F.shape[0] // 2] = 0
    return np.fft.ifft(Fh, axis=0)


def test_shifted_solver(small_state, rng):
    s = small_state
    shift = 0.3 + 0.2j
    solver = PeriodicSolver(s, (0.04,), shift=shift)
    F = rng.standard_normal((s.n_t, s.grid.n_dof)) + 1j * rng.standard_normal((s.n_t, s.grid.n_dof))
    u, info = solver.solve(F)
    r = time_derivative(u, 1) + apply_time_dependent(s, u, eta_prime=(0.04,)) + shift * u - F
    assert np.linalg.norm(r) < 1e-10 * np.linalg.norm(F)
    assert info["residual"] < 1e-10


def test_kernel_element(trivial_small, small_state):
    u = eigenfunction_u0(trivial_small)
    g = trivial_small.grid
    np.testing.assert_array_equal(u[:, : g.n_int], 1.0)
    np.testing.assert_array_equal(u[:, g.n_int:], 0.0)
    assert u0_size(trivial_small, u) == 0.0
    u0 = eigenfunction_u0(small_state)
    size = u0_size(small_state, u0)
    p = small_state.params
    assert 0 < size < 1.0 / (p.nu * p.gamma**2)


def test_bloch_eigenfunction(small_state):
    s = small_state
    res = monodromy((0.02,), s, 8)
    u, lam, resid = eigenfunction_u_eta((0.02,), res, s)
    assert lam == pytest.approx(res.exponents[0])
    assert resid < 1e-8
    assert lam.real < 0


def test_decay_rate_trivial_matches_spectrum(trivial_small):
    L = assemble_L(trivial_small, index=0).matrix
    ev = np.linalg.eigvals(L)
    slowest = np.sort(ev.real)[1]  # skip the constant-density kernel
    out = decay_rate(trivial_small, trials=2, periods=6)
    assert out.rate == pytest.approx(2 * slowest, rel=0.2)
    assert out.norms.shape == (2, 25)
