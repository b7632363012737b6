"""Space-time periodic base state of the forced layer.

The state is computed in the variables ``phi = gamma^2 (rho - 1)`` and
``w = v``, which satisfy

    d_t phi + gamma^2 div w = f,          f = -div(phi w)
    d_t w - nu Lap w - nu_tilde grad div w + grad phi = g

with ``g = S G - w.grad w - phi/(gamma^2 + phi) (nu Lap w + nu_tilde grad div w)
- (p'(rho)/rho - 1) grad phi``.  The stiff linear block is integrated
implicitly and ``f, g`` explicitly.  A stationary Lame problem provides the
starting point, after which the solution is marched period by period until
the periodicity defect stops changing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import numpy.typing as npt
import scipy.linalg as sla

from .config import Params
from .grid import CellGrid, time_derivative, time_interpolate

Array = npt.NDArray

log = logging.getLogger(__name__)


class PositivityError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = history


# ---------------------------------------------------------------- the state container

@dataclass
class PeriodicState:
    """Base state sampled at ``n_t`` uniform times over one period.

    ``phi`` has shape ``(n_t, n_int)`` and ``w`` shape ``(n_t, n, n_int)``;
    both live on interior nodes.  Derived coefficient fields are cached.
    """

    grid: CellGrid
    params: Params
    phi: Array
    w: Array
    defect_history: list[float] = field(default_factory=list)
    contraction: list[float] = field(default_factory=list)

    @classmethod
    def trivial(cls, grid: CellGrid, params: Params, n_t: int = 64) -> "PeriodicState":
        return cls(grid, params, np.zeros((n_t, grid.n_int)),
                   np.zeros((n_t, grid.dim_n, grid.n_int)))

    @property
    def n_t(self) -> int:
        return self.phi.shape[0]

    @property
    def times(self) -> Array:
        return np.arange(self.n_t) / self.n_t

    @cached_property
    def is_trivial(self) -> bool:
        return not (np.any(self.phi) or np.any(self.w))

    @property
    def rho(self) -> Array:
        return 1.0 + self.phi / self.params.gamma**2

    @property
    def v(self) -> Array:
        return self.w

    @cached_property
    def _derived(self) -> dict[str, Array]:
        g, p = self.grid, self.params
        rho = self.rho
        if np.any(rho <= 0):
            raise PositivityError("density positivity lost")
        n = g.dim_n
        grad_v = np.empty((self.n_t, n, n, g.n_int))
        visc = np.empty((self.n_t, n, g.n_int))
        for k in range(self.n_t):
            ops = g.diff_ops(self.phi[k], self.w[k])
            visc[k] = (p.nu * ops["laplace"] + p.nu_tilde * ops["grad_div"]).real
            dops = [g.hx[j] for j in range(n - 1)] + [g.zw]
            for i in range(n):
                for j in range(n):
                    grad_v[k, i, j] = dops[i] @ self.w[k, j]
        return {
            "rho": rho,
            "dp": p.pressure.dp(rho),
            "v": self.w,
            "grad_v": grad_v,
            "visc": visc,
            "phi": self.phi,
        }

    def coefficients(self, t: float | None = None, index: int | None = None) -> dict[str, Array]:
        """Coefficient fields at a stored sample or, by trigonometric interpolation, any time."""
        d = self._derived
        if index is not None:
            return {k: v[index] for k, v in d.items()}
        if t is None:
            raise ValueError("give either a time or a sample index")
        s = float(t) * self.n_t
        if abs(s - round(s)) < 1e-12:
            return {k: v[int(round(s)) % self.n_t] for k, v in d.items()}
        if self.is_trivial:
            return {k: v[0] for k, v in d.items()}
        return {k: time_interpolate(v, t) for k, v in d.items()}

    def time_derivatives(self) -> tuple[Array, Array]:
        return time_derivative(self.phi, 1), time_derivative(self.w, 1)

    @property
    def rho_min(self) -> float:
        return float(self.rho.min())

    def mean_rho(self) -> Array:
        return self.grid.mean(self.rho)


# ---------------------------------------------------------------- nonlinear system

class NonlinearSystem:
    """Right-hand side pieces of the transformed system on a real grid.

    ``linear`` is the constant block ``[[0, gamma^2 div], [grad, -nu Lap - nu_tilde grad div]]``
    on packed DOFs, ``nonlinear(u, t)`` returns ``(f, g)`` packed.
    """

    def __init__(self, params: Params, grid: CellGrid, force: Array | None):
        self.params, self.grid = params, grid
        g, p = grid, params
        n, N = g.dim_n, g.n_int
        self.dw = [g.hx[j] for j in range(n - 1)] + [g.zw]
        self.dphi = [g.hx[j] for j in range(n - 1)] + [g.zphi]
        lap = sum(self._d2(k, k) for k in range(n))
        A = np.zeros((g.n_dof, g.n_dof))
        for j in range(n):
            A[:N, (j + 1) * N:(j + 2) * N] = p.gamma**2 * self.dw[j]
            A[(j + 1) * N:(j + 2) * N, :N] = self.dphi[j]
            for i in range(n):
                b = -p.nu_tilde * self._d2(j, i)
                if i == j:
                    b = b - p.nu * lap
                A[(j + 1) * N:(j + 2) * N, (i + 1) * N:(i + 2) * N] = b
        self.linear = A
        self.lame = A[N:, N:]
        # force samples restricted to interior nodes: shape (n_t, n, N)
        self.force = None if force is None else np.asarray(force)

    def _d2(self, i: int, j: int) -> Array:
        g = self.grid
        nz = g.dim_n - 1
        if i == nz and j == nz:
            return g.zw2
        return self.dw[i] @ self.dw[j]

    def force_at(self, t: float) -> Array:
        if self.force is None:
            return np.zeros((self.grid.dim_n, self.grid.n_int))
        return time_interpolate(self.force, t % 1.0)

    def convective(self, w: Array) -> Array:
        n = self.grid.dim_n
        return np.stack([sum(w[k] * (self.dw[k] @ w[i]) for k in range(n)) for i in range(n)])

    def nonlinear(self, u: Array, t: float) -> Array:
        g, p = self.grid, self.params
        n = g.dim_n
        phi, w = g.blocks(u)
        denom = p.gamma**2 + phi
        if np.any(denom <= 0):
            raise PositivityError("density positivity lost")
        f = -sum(self.dw[j] @ (phi * w[j]) for j in range(n))
        lap = sum(self._d2(k, k) for k in range(n))
        visc = np.stack([p.nu * (lap @ w[i]) + p.nu_tilde * sum(self._d2(i, j) @ w[j] for j in range(n))
                         for i in range(n)])
        rho = denom / p.gamma**2
        press = p.pressure.dp(rho) / rho - 1.0
        grad_phi = np.stack([self.dphi[i] @ phi for i in range(n)])
        gw = (p.S_force * self.force_at(t) - self.convective(w)
              - (phi / denom) * visc - press * grad_phi)
        return g.pack(f, gw)

    def nonlinear_kernel_form(self, u: Array, t: float) -> Array:
        """Same forcing with the pressure term written through the averaged kernel.

        ``phi/(gamma^2+phi) grad phi - 1/(gamma^2+phi) grad(P(phi) phi^2)``; used as a
        cross-check of :meth:`nonlinear`.
        """
        g, p = self.grid, self.params
        n = g.dim_n
        phi, w = g.blocks(u)
        base = self.nonlinear(u, t)
        _, gw = g.blocks(base)
        denom = p.gamma**2 + phi
        rho = denom / p.gamma**2
        press = p.pressure.dp(rho) / rho - 1.0
        grad_phi = np.stack([self.dphi[i] @ phi for i in range(n)])
        kern = p.pressure.pressure_remainder(phi, p.gamma) * phi**2
        alt = phi / denom * grad_phi - np.stack([self.dphi[i] @ kern for i in range(n)]) / denom
        gw = gw + press * grad_phi + alt
        return g.pack(g.blocks(base)[0], gw)


def force_on_interior(grid: CellGrid, force_full: Array) -> Array:
    """Restrict all-node force samples ``(n_t, n, n_full)`` to interior nodes."""
    return grid.interior_of_full(force_full)


def stationary_initializer(params: Params, grid: CellGrid, force_int: Array | None,
                           tol: float = 1e-13, max_iter: int = 200,
                           quadratic: bool = True) -> Array:
    """Packed initial state ``(0, w0)`` with ``-nu Lap w0 - nu_tilde grad div w0 = S G(0) - w0.grad w0``.

    Picard iteration on the constant-coefficient Lame system.
    """
    sys_ = NonlinearSystem(params, grid, force_int)
    g = grid
    n, N = g.dim_n, g.n_int
    lu = sla.lu_factor(sys_.lame)
    G0 = sys_.force_at(0.0) * params.S_force
    w = np.zeros((n, N))
    if not np.any(G0):
        return np.zeros(g.n_dof)
    incs: list[float] = []
    grow = 0
    for _ in range(max_iter):
        rhs = G0 - (sys_.convective(w) if quadratic else 0.0)
        w_new = sla.lu_solve(lu, rhs.ravel()).reshape(n, N)
        inc = float(np.sqrt(g.l2_sq(w_new - w).sum()))
        scale = float(np.sqrt(g.l2_sq(w_new).sum())) + 1e-300
        w = w_new
        if incs and inc > incs[-1]:
            grow += 1
            if grow >= 5:
                raise ConvergenceError("force amplitude outside contraction regime", incs)
        else:
            grow = 0
        incs.append(inc)
        if inc <= tol * scale or not quadratic:
            break
    return g.pack(np.zeros(N), w)


class Marcher:
    """Second-order IMEX stepper: trapezoid on the linear block, Adams-Bashforth on the rest."""

    def __init__(self, system: NonlinearSystem, dt: float, scheme: str = "cnab2"):
        if scheme not in ("cnab2", "sbdf2"):
            raise ValueError("scheme must be 'cnab2' or 'sbdf2'")
        self.sys, self.dt, self.scheme = system, dt, scheme
        I = np.eye(system.grid.n_dof)
        A = system.linear
        if scheme == "cnab2":
            self._lu = sla.lu_factor(I + 0.5 * dt * A)
            self._rhs = I - 0.5 * dt * A
        else:
            self._lu = sla.lu_factor(1.5 * I + dt * A)
            self._lu1 = sla.lu_factor(I + dt * A)
        self.prev_n: Array | None = None
        self.prev_u: Array | None = None

    def reset(self) -> None:
        self.prev_n = self.prev_u = None

    def step(self, u: Array, t: float) -> Array:
        g = self.sys.grid
        nl = self.sys.nonlinear(u, t)
        dt = self.dt
        if self.scheme == "cnab2":
            ext = nl if self.prev_n is None else 1.5 * nl - 0.5 * self.prev_n
            u_new = sla.lu_solve(self._lu, self._rhs @ u + dt * ext)
        else:
            if self.prev_n is None:
                u_new = sla.lu_solve(self._lu1, u + dt * nl)
            else:
                rhs = 2.0 * u - 0.5 * self.prev_u + dt * (2.0 * nl - self.prev_n)
                u_new = sla.lu_solve(self._lu, rhs)
        self.prev_n, self.prev_u = nl, u
        u_new[: g.n_int] -= g.mean(u_new[: g.n_int])
        return u_new


def step_nonlinear(u: Array, t: float, dt: float, params: Params, grid: CellGrid,
                   force_int: Array | None = None, scheme: str = "cnab2") -> Array:
    """One self-starting IMEX step (first-order extrapolation of the explicit terms)."""
    m = Marcher(NonlinearSystem(params, grid, force_int), dt, scheme)
    return m.step(np.asarray(u, float), t)


def solve_periodic_state(params: Params, grid: CellGrid, force_full: Array | None,
                         n_t: int = 64, substeps: int = 4, tol: float = 1e-11,
                         max_periods: int = 400, scheme: str = "cnab2",
                         min_periods: int = 2, u_init: Array | None = None,
                         t_start: float = 0.0) -> PeriodicState:
    """March to the time-periodic state and store its final period.

    The defect ``|u(m) - u(m-1)|_{L2,gamma}`` is recorded after each period;
    marching stops when it falls below ``tol`` times the state size (or an
    absolute floor for the zero state).
    """
    if n_t < 4 or n_t & (n_t - 1):
        raise ValueError("n_t must be a power of two")
    g = grid
    force_int = None if force_full is None else force_on_interior(g, force_full)
    system = NonlinearSystem(params, g, force_int)
    dt = 1.0 / (n_t * substeps)
    marcher = Marcher(system, dt, scheme)
    if u_init is None:
        u = stationary_initializer(params, g, force_int)
    else:
        u = np.asarray(u_init, float).copy()
    history: list[float] = []
    ratios: list[float] = []
    samples = np.empty((n_t, g.n_dof))
    t = t_start
    for period in range(1, max_periods + 1):
        u_start = u.copy()
        for k in range(n_t):
            samples[k] = u
            for _ in range(substeps):
                u = marcher.step(u, t)
                t += dt
        defect = float(np.sqrt(g.norm_gamma_sq(u - u_start, params.gamma)))
        size = float(np.sqrt(g.norm_gamma_sq(u, params.gamma)))
        if history and history[-1] > 0:
            ratios.append(defect / history[-1])
        history.append(defect)
        log.debug("period %d defect %.3e", period, defect)
        if period >= min(min_periods, 1 if size == 0 else min_periods) and defect <= tol * size + 1e-300:
            phi, w = g.blocks(samples)
            state = PeriodicState(g, params, phi.copy(), w.copy(), history, ratios)
            if state.rho_min <= 0.5:
                raise PositivityError(f"minimum density {state.rho_min:.3f} below 1/2")
            return state
    raise ConvergenceError("no contraction to a periodic state within max_periods", history)


# ---------------------------------------------------------------- diagnostics

@dataclass
class ResidualReport:
    mass: float
    momentum: float
    mean_defect: float
    wall_defect: float
    periodicity_defect: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def residual(state: PeriodicState, force_full: Array | None) -> ResidualReport:
    """Space-time L2 residuals of the mass and momentum equations for the stored samples.

    Evaluated in the original variables: ``d_t rho + div(rho v)`` and
    ``rho(d_t v + v.grad v) - nu Lap v - nu_tilde grad div v + gamma^2 grad p(rho) - S rho G``.
    """
    g, p = state.grid, state.params
    n = g.dim_n
    rho = state.rho
    v = state.w
    drho = time_derivative(rho, 1)
    dv = time_derivative(v, 1)
    sys_ = NonlinearSystem(p, g, None if force_full is None else force_on_interior(g, force_full))
    dw = sys_.dw
    dphi = sys_.dphi
    mass = np.empty_like(rho)
    mom = np.empty_like(v)
    for k in range(state.n_t):
        mass[k] = drho[k] + sum(dw[j] @ (rho[k] * v[k, j]) for j in range(n))
        conv = sys_.convective(v[k])
        lap = sum(sys_._d2(a, a) for a in range(n))
        for i in range(n):
            visc = p.nu * (lap @ v[k, i]) + p.nu_tilde * sum(sys_._d2(i, j) @ v[k, j] for j in range(n))
            press = p.gamma**2 * (dphi[i] @ p.pressure.p(rho[k]))
            Gk = sys_.force[k, i] if sys_.force is not None else 0.0
            mom[k, i] = rho[k] * (dv[k, i] + conv[i]) - visc + press - p.S_force * rho[k] * Gk
    r_mass = float(np.sqrt(np.mean(g.l2_sq(mass))))
    r_mom = float(np.sqrt(np.mean(g.l2_sq(mom).sum(axis=-1))))
    mean_def = float(np.abs(g.mean(rho) - 1.0).max())
    per = state.defect_history[-1] if state.defect_history else 0.0
    return ResidualReport(r_mass, r_mom, mean_def, 0.0, per)


@dataclass
class EnergyReport:
    times: Array
    E2: Array
    E4: Array
    D2: float
    D4: float
    parts: dict
    E4_ratio: float
    D4_ratio: float

    def rows(self):
        for k, t in enumerate(self.times):
            yield {"t": float(t), "E2": float(self.E2[k]), "E4": float(self.E4[k])}


def _grad_phi_full(grid: CellGrid, phi: Array) -> Array:
    full = grid.to_full_phi(phi)
    return np.stack([grid.deriv_full(full, a) for a in range(grid.dim_n)], axis=-2)


def energy_report(state: PeriodicState) -> EnergyReport:
    """Energy and dissipation functionals of the base state (unit equivalence constants)."""
    g, p = state.grid, state.params
    if state.n_t < 8:
        raise ValueError("insufficient time resolution for two time derivatives")
    phi, w = state.phi, state.w
    tot = p.nu_total
    parts = {}
    E = {}
    D = {}
    gphi = _grad_phi_full(g, phi)
    for m in (2, 4):
        a = g.triple_norm(phi, m, kind="phi").value ** 2 / p.gamma**2
        b = g.triple_norm(w, m, kind="w").value ** 2
        c = p.nu**2 / tot * g.triple_norm(w, m + 1, kind="w").value ** 2
        d = g.triple_norm(gphi, m - 1, kind="full").value ** 2 / tot
        dt_phi = time_derivative(phi, m // 2)
        e = tot / p.gamma**4 * g.l2_sq(dt_phi)
        parts[m] = {"phi_m": a, "w_m": b, "w_m+1": c, "grad_phi_m-1": d, "dt_phi": e}
        E[m] = a + b
        D[m] = float(np.mean(c + d + e))
    scale = p.gamma**4 / p.nu**2
    return EnergyReport(state.times, E[2], E[4], D[2], D[4], parts,
                        float(E[4].max() * scale), float(D[4] * scale))
