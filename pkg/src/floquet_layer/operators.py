"""Linearized operators on packed degree-of-freedom vectors.

All matrices act on the packed layout of :class:`~floquet_layer.grid.CellGrid`
(density block first, then velocity components on interior nodes).  The
linearization about a base state ``(rho_p, v_p)`` is

    L = [[div_e(v_p .),                 gamma^2 div_e(rho_p .)],
         [grad_e(p'(rho_p)/rho_p .) + visc_p/(gamma^2 rho_p^2),
          -(nu/rho_p) Lap_e - (nu_tilde/rho_p) grad_e div_e + v_p.grad_e + (. . grad) v_p]]

where ``visc_p = nu Lap v_p + nu_tilde grad div v_p`` and ``_e`` marks the
Bloch shift ``grad + i eta``.  The density perturbation is scaled by
``gamma^2``, so the natural energy weight on it is ``p'(rho_p)/(gamma^2 rho_p)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
import scipy.linalg as sla

from .grid import CellGrid, time_derivative

Array = npt.NDArray


@dataclass(frozen=True)
class OperatorMatrix:
    """Dense operator on packed DOFs with a short provenance label."""

    matrix: Array
    name: str
    eta: tuple[float, ...]
    t: float | None

    def __matmul__(self, other):
        return self.matrix @ other


def _eta_tuple(grid: CellGrid, eta) -> tuple[float, ...]:
    if eta is None:
        return (0.0,) * (grid.dim_n - 1)
    eta = tuple(float(e) for e in np.atleast_1d(eta))
    if len(eta) != grid.dim_n - 1:
        raise ValueError("eta_prime must have dim_n - 1 entries")
    return eta


def _coeffs(state, t, index):
    try:
        return state.coefficients(t=t, index=index)
    except (AttributeError, KeyError) as exc:  # pragma: no cover - defensive
        raise ValueError("state is missing derived coefficient fields") from exc


def _shifted(grid: CellGrid, eta):
    """Bloch-shifted first derivatives: (density-type list, wall-vanishing list)."""
    n = grid.dim_n
    eye = np.eye(grid.n_int)
    gp, gw = [], []
    for j in range(n - 1):
        op = grid.hx[j] + 1j * eta[j] * eye if eta[j] else grid.hx[j].astype(complex)
        gp.append(op)
        gw.append(op)
    gp.append(grid.zphi.astype(complex))
    gw.append(grid.zw.astype(complex))
    return gp, gw


def _second(grid: CellGrid, gw, i: int, j: int) -> Array:
    nz = grid.dim_n - 1
    if i == nz and j == nz:
        return grid.zw2.astype(complex)
    return gw[i] @ gw[j]


def assemble_L(state, t: float | None = None, eta_prime=None, *, index: int | None = None) -> OperatorMatrix:
    """Bloch-shifted linearized operator at one time."""
    g, p = state.grid, state.params
    eta = _eta_tuple(g, eta_prime)
    c = _coeffs(state, t, index)
    n, N = g.dim_n, g.n_int
    rho, dp, v, gv, visc = c["rho"], c["dp"], c["v"], c["grad_v"], c["visc"]
    gp, gw = _shifted(g, eta)
    M = np.zeros(((n + 1) * N, (n + 1) * N), dtype=complex)
    blk = lambda a, b: (slice(a * N, (a + 1) * N), slice(b * N, (b + 1) * N))

    M[blk(0, 0)] = sum(gw[j] * v[j][None, :] for j in range(n))
    for j in range(n):
        M[blk(0, j + 1)] = p.gamma**2 * gw[j] * rho[None, :]
    inv_rho = 1.0 / rho
    lap = sum(_second(g, gw, k, k) for k in range(n))
    adv = sum(v[k][:, None] * gw[k] for k in range(n))
    for i in range(n):
        M[blk(i + 1, 0)] = gp[i] * (dp * inv_rho)[None, :] + np.diag(visc[i] * inv_rho**2 / p.gamma**2)
        for j in range(n):
            b = -(p.nu_tilde * inv_rho)[:, None] * _second(g, gw, i, j)
            if i == j:
                b = b - (p.nu * inv_rho)[:, None] * lap + adv
            b = b + np.diag(gv[j, i])
            M[blk(i + 1, j + 1)] = b
    return OperatorMatrix(M, "L", eta, t)


def assemble_B1(j: int, state, t: float | None = None, *, index: int | None = None) -> OperatorMatrix:
    """First-order coefficient of the Bloch expansion along horizontal direction ``j`` (0-based)."""
    g, p = state.grid, state.params
    if not 0 <= j < g.dim_n - 1:
        raise IndexError("direction index out of range")
    c = _coeffs(state, t, index)
    n, N = g.dim_n, g.n_int
    rho, dp, v = c["rho"], c["dp"], c["v"]
    _, gw = _shifted(g, (0.0,) * (n - 1))
    M = np.zeros(((n + 1) * N, (n + 1) * N), dtype=complex)
    blk = lambda a, b: (slice(a * N, (a + 1) * N), slice(b * N, (b + 1) * N))
    inv_rho = 1.0 / rho
    M[blk(0, 0)] = np.diag(v[j])
    M[blk(0, j + 1)] = p.gamma**2 * np.diag(rho)
    M[blk(j + 1, 0)] = np.diag(dp * inv_rho)
    for i in range(n):
        for l in range(n):
            b = np.zeros((N, N), dtype=complex)
            if i == l:
                b += -2.0 * (p.nu * inv_rho)[:, None] * gw[j] + np.diag(v[j])
            if i == j:
                b += -(p.nu_tilde * inv_rho)[:, None] * gw[l]
            if l == j:
                b += -(p.nu_tilde * inv_rho)[:, None] * gw[i]
            M[blk(i + 1, l + 1)] += b
    return OperatorMatrix(1j * M, f"B1[{j}]", (), t)


def assemble_B2(j: int, k: int, state, t: float | None = None, *, index: int | None = None) -> OperatorMatrix:
    """Second-order coefficient; only the velocity block is nonzero."""
    g, p = state.grid, state.params
    if not (0 <= j < g.dim_n - 1 and 0 <= k < g.dim_n - 1):
        raise IndexError("direction index out of range")
    c = _coeffs(state, t, index)
    n, N = g.dim_n, g.n_int
    inv_rho = 1.0 / c["rho"]
    M = np.zeros(((n + 1) * N, (n + 1) * N), dtype=complex)
    for i in range(n):
        sl = slice((i + 1) * N, (i + 2) * N)
        if j == k:
            M[sl, sl] += np.diag(p.nu * inv_rho)
    rows = slice((j + 1) * N, (j + 2) * N)
    cols = slice((k + 1) * N, (k + 2) * N)
    M[rows, cols] += np.diag(p.nu_tilde * inv_rho)
    return OperatorMatrix(M.astype(complex), f"B2[{j},{k}]", (), t)


def assemble_adjoint(state, t: float | None = None, eta_prime=None, *, index: int | None = None) -> OperatorMatrix:
    """Adjoint of ``assemble_L`` for the weighted pairing (continuous formula, collocated)."""
    g, p = state.grid, state.params
    eta = _eta_tuple(g, eta_prime)
    c = _coeffs(state, t, index)
    n, N = g.dim_n, g.n_int
    rho, dp, v, gv, visc = c["rho"], c["dp"], c["v"], c["grad_v"], c["visc"]
    wphi = dp / (p.gamma**2 * rho)
    gp, gw = _shifted(g, eta)
    M = np.zeros(((n + 1) * N, (n + 1) * N), dtype=complex)
    blk = lambda a, b: (slice(a * N, (a + 1) * N), slice(b * N, (b + 1) * N))
    inv_rho = 1.0 / rho
    M[blk(0, 0)] = -sum((v[k] / wphi)[:, None] * gp[k] * wphi[None, :] for k in range(n))
    for j in range(n):
        M[blk(0, j + 1)] = -p.gamma**2 * gw[j] * rho[None, :] + np.diag(visc[j] / dp)
    lap = sum(_second(g, gw, k, k) for k in range(n))
    for i in range(n):
        M[blk(i + 1, 0)] = -p.gamma**2 * gp[i] * wphi[None, :]
        for j in range(n):
            b = -(p.nu_tilde * inv_rho)[:, None] * _second(g, gw, i, j)
            if i == j:
                b = b - (p.nu * inv_rho)[:, None] * lap
                b = b - sum(inv_rho[:, None] * gw[k] * (rho * v[k])[None, :] for k in range(n))
            b = b + np.diag(gv[i, j])
            M[blk(i + 1, j + 1)] = b
    return OperatorMatrix(M, "L*", eta, t)


def adjoint_time_term(state, u: Array) -> Array:
    """``-(1/weight) d_t(weight u)`` per block: the adjoint of ``d_t`` in the space-time pairing."""
    g, p = state.grid, state.params
    rho = state._derived["rho"]
    dp = state._derived["dp"]
    wphi = dp / (p.gamma**2 * rho)
    phi, w = g.blocks(u)
    dphi = -time_derivative(wphi * phi, 1) / wphi
    dw = -time_derivative(rho[:, None, :] * w, 1) / rho[:, None, :]
    return g.pack(dphi, dw)


def adjoint_eigenfunction(state) -> Array:
    """Adjoint kernel element normalized so that its pairing with ``u`` is the space-time mean of ``phi``."""
    g, p = state.grid, state.params
    rho = state._derived["rho"]
    dp = state._derived["dp"]
    phi = p.gamma**2 * rho / dp / g.volume
    return g.pack(phi.astype(complex), np.zeros((state.n_t, g.dim_n, g.n_int), complex))


def apply_time_dependent(state, u: Array, eta_prime=None, op=assemble_L) -> Array:
    """Apply ``op`` at each stored sample to time samples ``u`` of shape ``(n_t, n_dof)``."""
    return np.stack([op(state, index=k, eta_prime=eta_prime).matrix @ u[k] for k in range(state.n_t)])


def apply_B0(state, u: Array) -> Array:
    """``d_t u + L(t) u`` by spectral time differentiation."""
    return time_derivative(u, 1) + apply_time_dependent(state, u)


# ---------------------------------------------------------------- Bogovskii operator

class Bogovskii:
    """Right inverse of the divergence via a Stokes saddle-point solve.

    Solves ``-Lap v + grad q = 0``, ``div v = f``, ``v = 0`` on the walls and
    returns ``v``.  ``q`` is fixed by a zero-mean constraint.
    """

    def __init__(self, grid: CellGrid):
        self.grid = grid
        g = grid
        n, N = g.dim_n, g.n_int
        gp, gw = _shifted(g, (0.0,) * (n - 1))
        gp = [a.real for a in gp]
        gw = [a.real for a in gw]
        lap = sum(_second(g, [x.astype(complex) for x in gw], k, k).real for k in range(n))
        size = (n + 1) * N + 1
        K = np.zeros((size, size))
        for i in range(n):
            K[i * N:(i + 1) * N, i * N:(i + 1) * N] = -lap
            K[i * N:(i + 1) * N, n * N:(n + 1) * N] = gp[i]
            K[n * N:(n + 1) * N, i * N:(i + 1) * N] = gw[i]
        # bordering: free constant in the divergence rows, zero-mean pressure
        K[n * N:(n + 1) * N, -1] = 1.0
        K[-1, n * N:(n + 1) * N] = g.weights_int
        self._lu = sla.lu_factor(K)
        self._n = n
        self._N = N

    def __call__(self, f: Array) -> Array:
        g = self.grid
        f = np.asarray(f)
        scale = np.sqrt(g.l2_sq(f)) + 1e-300
        if abs(g.integrate(f)) > 1e-10 * scale * np.sqrt(g.volume):
            raise ValueError("Bogovskii operator needs mean-zero data")
        if np.iscomplexobj(f):
            return self(f.real) + 1j * self(f.imag)
        rhs = np.zeros(self._lu[0].shape[0])
        rhs[self._n * self._N:(self._n + 1) * self._N] = f
        sol = sla.lu_solve(self._lu, rhs)
        return sol[: self._n * self._N].reshape(self._n, self._N)

    def divergence(self, v: Array) -> Array:
        g = self.grid
        return sum((g.hx[j] @ v[j]) for j in range(g.dim_n - 1)) + g.zw @ v[-1]


def bogovskii(f: Array, grid: CellGrid) -> Array:
    """Convenience wrapper building the solver once per call."""
    return Bogovskii(grid)(f)


def choose_delta(grid: CellGrid, params, bog: Bogovskii, rng: np.random.Generator,
                 n_samples: int = 100, rho_p: Array | None = None) -> tuple[float, float, float]:
    """Pick the coupling ``delta`` for the Bogovskii pairing and check norm equivalence.

    Starts from ``(1/4) min{1/(nu+nu_tilde), nu/gamma^2, 1/gamma}`` and halves
    until ``1/2 |u|^2 <= ((u,u)) <= 3/2 |u|^2`` holds on random mean-zero
    fields.  Returns ``(delta, min_ratio, max_ratio)``.
    """
    delta = 0.25 * min(1.0 / params.nu_total, params.nu / params.gamma**2, 1.0 / params.gamma)
    rho = np.ones(grid.n_int) if rho_p is None else rho_p
    samples = []
    for _ in range(n_samples):
        u = rng.standard_normal(grid.n_dof) + 1j * rng.standard_normal(grid.n_dof)
        phi, w = grid.blocks(u)
        phi = phi - grid.mean(phi)
        samples.append(grid.pack(phi * params.gamma, w))
    for _ in range(60):
        ratios = []
        for u in samples:
            val = grid.inner_bogovskii(u, u, delta, bog, rho, params.pressure, params.gamma).real
            ratios.append(val / grid.norm_gamma_sq(u, params.gamma))
        lo, hi = min(ratios), max(ratios)
        if lo >= 0.5 and hi <= 1.5:
            return delta, lo, hi
        delta *= 0.5
    raise RuntimeError("no admissible delta found")


# ---------------------------------------------------------------- projections

def space_time_mean_phi(grid: CellGrid, u: Array) -> complex:
    phi, _ = grid.blocks(u)
    return complex(np.mean(grid.mean(phi)))


def pair_space_time(state, u: Array, v: Array) -> complex:
    """Time average of the weighted pairing over the stored samples."""
    g, p = state.grid, state.params
    rho = state._derived["rho"]
    return complex(np.mean([g.inner_weighted(u[k], v[k], rho[k], p.pressure, p.gamma)
                            for k in range(state.n_t)]))


def projection_pi0(u: Array, u0: Array, u0_star: Array, state) -> Array:
    """Rank-one projection ``<<u, u0*>> u0``."""
    return pair_space_time(state, u, u0_star) * u0


def projection_mean_mode(grid: CellGrid, u: Array) -> Array:
    """Companion projection onto ``(<phi(t)>, 0)``."""
    phi, _ = grid.blocks(u)
    m = grid.mean(phi)
    out = np.zeros_like(u, dtype=np.result_type(u, float))
    out[..., : grid.n_int] = m[..., None]
    return out


# ---------------------------------------------------------------- matrix-free action

class FieldOperator:
    """Matrix-free action of the linearized operator on batches of time samples.

    Built from the one-dimensional differentiation matrices; independent of the
    dense assembly above, so the two can be cross-checked.
    """

    def __init__(self, grid: CellGrid, params, eta_prime=None):
        self.grid, self.params = grid, params
        self.eta = _eta_tuple(grid, eta_prime)
        n = grid.dim_n
        gp, gw = _shifted(grid, self.eta)
        self.gpT = [a.T.copy() for a in gp]
        self.gwT = [a.T.copy() for a in gw]
        self.d2T = [[_second(grid, gw, i, j).T.copy() for j in range(n)] for i in range(n)]
        self.lapT = sum(self.d2T[k][k] for k in range(n))

    def apply(self, coeffs: dict, u: Array) -> Array:
        """``L u`` for ``u`` of shape ``(batch, n_dof)`` and coefficient arrays with leading batch axis."""
        g, p = self.grid, self.params
        n = g.dim_n
        phi, w = g.blocks(u)
        rho, dp, v, gv, visc = coeffs["rho"], coeffs["dp"], coeffs["v"], coeffs["grad_v"], coeffs["visc"]
        inv_rho = 1.0 / rho
        r_phi = sum((v[:, j] * phi) @ self.gwT[j] + p.gamma**2 * (rho * w[:, j]) @ self.gwT[j]
                    for j in range(n))
        r_w = np.empty_like(w, dtype=complex)
        c = dp * inv_rho
        for i in range(n):
            acc = (c * phi) @ self.gpT[i] + visc[:, i] * inv_rho**2 / p.gamma**2 * phi
            acc = acc - p.nu * inv_rho * (w[:, i] @ self.lapT)
            for j in range(n):
                acc = acc - p.nu_tilde * inv_rho * (w[:, j] @ self.d2T[i][j]) + gv[:, j, i] * w[:, j]
            for k in range(n):
                acc = acc + v[:, k] * (w[:, i] @ self.gwT[k])
            r_w[:, i] = acc
        return g.pack(r_phi, r_w)
