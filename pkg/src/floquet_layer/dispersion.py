"""Low-wavenumber expansion of the leading Floquet exponent.

Near ``eta' = 0`` the leading exponent behaves like

    lambda(eta') = -i sum_j a_j eta_j - sum_jk a_jk eta_j eta_k + O(|eta'|^3).

Two independent routes are provided.  The perturbation route evaluates the
coefficients from the kernel element ``u0``, the cell problems and the
adjoint kernel element.  The sweep route computes the exponent by monodromy
at several small ``eta'`` and fits the quadratic model.  The stationary
Stokes cell gives the reference matrix ``A~`` and the constant ``kappa0``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from .floquet import (
    PeriodicSolver,
    SimplicityError,
    eigenfunction_u0,
    leading_exponent,
    monodromy,
    periodic_linear_solve,
)
from .operators import (
    adjoint_eigenfunction,
    apply_B0,
    apply_time_dependent,
    assemble_B1,
    assemble_L,
    pair_space_time,
)

Array = npt.NDArray

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- perturbation route

def _space_time_mean(grid, f: Array) -> complex:
    return complex(np.mean(grid.mean(f)))


def drift_integrand(j: int, u: Array, state) -> Array:
    """``v^j phi + gamma^2 rho w^j`` at every stored time; its space-time mean enters every coefficient."""
    g, p = state.grid, state.params
    phi, w = g.blocks(u)
    return state.v[:, j] * phi + p.gamma**2 * state.rho * w[:, j]


def first_order(u0: Array, state) -> tuple[Array, Array]:
    """Return ``(a, lambda1)`` with ``lambda1_j = -i <<v^j phi0 + gamma^2 rho w0^j>>`` and ``a_j = -Im lambda1_j``."""
    g = state.grid
    lam1 = np.array([-1j * _space_time_mean(g, drift_integrand(j, u0, state))
                     for j in range(g.dim_n - 1)])
    return -lam1.imag, lam1


def apply_B1(j: int, state, u: Array) -> Array:
    return apply_time_dependent(state, u, op=lambda st, index, eta_prime: assemble_B1(j, st, index=index))


@dataclass
class CellSolution:
    """Cell corrector ``u1`` solving ``B0 u1 = (I - Pi0) B1_k u0`` with zero space-time density mean.

    ``phi`` and ``w`` are the rescaled parts ``u1 = (i phi, (i/nu) w)``.
    """

    k: int
    u1: Array
    rhs: Array
    residual: float
    nu: float

    def scaled(self, grid) -> tuple[Array, Array]:
        phi, w = grid.blocks(self.u1)
        return -1j * phi, -1j * self.nu * w


def cell_problem(k: int, u0: Array, state, tol: float = 1e-12,
                 solver: PeriodicSolver | None = None) -> CellSolution:
    """Solve the cell problem for direction ``k``."""
    b1u0 = apply_B1(k, state, u0)
    ustar = adjoint_eigenfunction(state)
    rhs = b1u0 - pair_space_time(state, b1u0, ustar) * u0
    if state.is_trivial:
        u1 = _stationary_solve(state, rhs)
    else:
        u1 = periodic_linear_solve(rhs, state, tol=tol, solver=solver)
    res = float(np.linalg.norm(apply_B0(state, u1) - rhs) / max(np.linalg.norm(rhs), 1e-300))
    return CellSolution(k, u1, rhs, res, state.params.nu)


def _stationary_solve(state, rhs: Array) -> Array:
    """Time-independent solve with density mean zero; used when all coefficients are constant."""
    g = state.grid
    if np.abs(rhs - rhs[0]).max() > 1e-14 * max(np.abs(rhs).max(), 1.0):
        return periodic_linear_solve(rhs, state)
    L = assemble_L(state, index=0).matrix
    u = _bordered_solve(g, L, rhs[0])
    return np.tile(u, (state.n_t, 1))


def _bordered_solve(grid, L: Array, f: Array) -> Array:
    """Solve ``L u = f`` with ``<phi> = 0`` using a Lagrange multiplier on the density mean."""
    n = L.shape[0]
    N = grid.n_int
    c = np.zeros(n)
    c[:N] = grid.weights_int / grid.weights_int.sum()
    M = np.zeros((n + 1, n + 1), dtype=complex)
    M[:n, :n] = L
    M[:n, n] = c
    M[n, :n] = c
    sol = np.linalg.solve(M, np.concatenate([f, [0.0]]))
    if abs(sol[n]) > 1e-8 * max(np.abs(f).max(), 1e-300):
        raise ValueError("right side is not compatible with the density mean constraint")
    return sol[:n]


def second_order(cells: list[CellSolution], state) -> tuple[dict[str, Array], Array]:
    """Second-order coefficients from the cell correctors.

    Returns ``(candidates, lambda2)``.  ``lambda2[j, k]`` is the symmetrized
    ``(i/2)(<<v^j phi1^(k) + gamma^2 rho w1^(k),j>> + (j <-> k))`` evaluated on
    the unscaled correctors.  Two sign conventions are offered:
    ``"derived"`` gives ``A = -Re lambda2`` and ``"display"`` its negative.
    """
    g = state.grid
    d = g.dim_n - 1
    raw = np.empty((d, d), complex)
    for j in range(d):
        for c in cells:
            raw[j, c.k] = 1j * _space_time_mean(g, drift_integrand(j, c.u1, state))
    lam2 = 0.5 * (raw + raw.T)
    A = -lam2.real
    return {"derived": A, "display": -A}, lam2


# ---------------------------------------------------------------- Stokes cell

@dataclass
class StokesCell:
    """Stationary Stokes correctors and the reference matrix.

    ``W[k]`` is the rescaled velocity ``nu * w~`` of the solution of
    ``[[0, gamma^2 div], [grad, -nu Lap - nu_tilde grad div]] u~ = (0, e_k)``.
    """

    phi: Array
    W: Array
    A_mean: Array
    A_grad: Array
    kappa0: float

    @property
    def A(self) -> Array:
        return self.A_mean


def stokes_cell(grid, params) -> StokesCell:
    """Solve the stationary cell problems and evaluate both matrix formulas."""
    from .periodic_state import PeriodicState

    d = grid.dim_n - 1
    N = grid.n_int
    triv = PeriodicState.trivial(grid, params, n_t=1)
    L = assemble_L(triv, index=0).matrix.real
    cond = np.linalg.cond(L[N:, N:])
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError("singular Stokes cell system")
    phis, Ws = [], []
    for k in range(d):
        f = np.zeros(grid.n_dof)
        f[(k + 1) * N:(k + 2) * N] = 1.0
        u = _bordered_solve(grid, L, f).real
        phi, w = grid.blocks(u)
        phis.append(phi)
        Ws.append(params.nu * w)
    g2nu = params.gamma**2 / params.nu
    A_mean = np.array([[g2nu * grid.mean(Ws[k][j]) for k in range(d)] for j in range(d)])
    grads = []
    for k in range(d):
        full = grid.to_full_w(Ws[k])
        grads.append([[grid.deriv_full(full[i], a) for a in range(grid.dim_n)] for i in range(grid.dim_n)])
    A_grad = np.empty((d, d))
    for j in range(d):
        for k in range(d):
            s = 0.0
            for i in range(grid.dim_n):
                for a in range(grid.dim_n):
                    s += grid.integrate_full(grads[j][i][a] * grads[k][i][a])
            A_grad[j, k] = g2nu * s / grid.volume
    A_sym = 0.5 * (A_mean + A_mean.T)
    kappa0 = float(np.linalg.eigvalsh(A_sym).min() / g2nu)
    return StokesCell(np.array(phis), np.array(Ws), A_mean, A_grad, kappa0)


# ---------------------------------------------------------------- combined report

@dataclass
class DispersionCoefficients:
    a: Array
    A: Array
    lambda1: Array
    lambda2: Array
    candidates: dict
    sign: str
    stokes_A_tilde: Array
    kappa0_hat: float
    cell_residuals: list[float]
    u0_pairing: complex
    fit_report: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        def c(z):
            z = np.asarray(z)
            return {"re": z.real.tolist(), "im": z.imag.tolist()} if np.iscomplexobj(z) else z.tolist()
        return {
            "a": c(self.a), "A": c(self.A), "lambda1": c(self.lambda1), "lambda2": c(self.lambda2),
            "A_candidates": {k: c(v) for k, v in self.candidates.items()}, "sign": self.sign,
            "stokes_A_tilde": c(self.stokes_A_tilde), "kappa0_hat": self.kappa0_hat,
            "cell_residuals": self.cell_residuals,
            "u0_pairing": [self.u0_pairing.real, self.u0_pairing.imag],
            "imag_residual_a": float(np.abs(self.lambda1.real).max()) if self.lambda1.size else 0.0,
            "imag_residual_A": float(np.abs(self.lambda2.imag).max()) if self.lambda2.size else 0.0,
            "fit_report": self.fit_report,
        }


def perturbation_coefficients(state, sign: str = "derived", tol: float = 1e-12,
                              u0: Array | None = None, stokes: StokesCell | None = None) -> DispersionCoefficients:
    """Run the perturbation route: kernel element, cell problems, first and second order."""
    if sign not in ("derived", "display"):
        raise ValueError("sign must be 'derived' or 'display'")
    g = state.grid
    solver = None if state.is_trivial else PeriodicSolver(state)
    if u0 is None:
        u0 = eigenfunction_u0(state, tol=tol, solver=solver)
    a, lam1 = first_order(u0, state)
    cells = [cell_problem(k, u0, state, tol=tol, solver=solver) for k in range(g.dim_n - 1)]
    cand, lam2 = second_order(cells, state)
    stokes = stokes or stokes_cell(g, state.params)
    pairing = pair_space_time(state, u0, adjoint_eigenfunction(state))
    return DispersionCoefficients(a, cand[sign], lam1, lam2, cand, sign, stokes.A_mean,
                                  stokes.kappa0, [c.residual for c in cells], pairing)


# ---------------------------------------------------------------- sweep route

def default_sweep(alpha, fractions=(0.02, 0.04, 0.08), direction: int = 0) -> list[tuple[float, ...]]:
    """Symmetric sweep along one axis at ``+-fraction * alpha_j / 2``."""
    d = len(alpha)
    pts = []
    for f in fractions:
        for s in (1.0, -1.0):
            e = [0.0] * d
            e[direction] = s * f * alpha[direction] / 2.0
            pts.append(tuple(e))
    return pts


@dataclass
class SweepPoint:
    eta: tuple[float, ...]
    lam: complex
    ratio: float
    beta_gap: float
    simple: bool


def _unwrap(lam: complex, ref: complex) -> complex:
    k = round((ref.imag - lam.imag) / (2 * np.pi))
    return lam + 2j * np.pi * k


def sweep_exponents(eta_list, state, steps_per_period: int = 16, min_ratio: float = 1.0 + 1e-3
                    ) -> list[SweepPoint]:
    """Leading exponent at every sweep point, on the branch continuous from ``lambda(0) = 0``."""
    order = sorted(range(len(eta_list)), key=lambda i: float(np.linalg.norm(eta_list[i])))
    out: list[SweepPoint | None] = [None] * len(eta_list)
    ref = 0.0j
    for i in order:
        eta = tuple(float(e) for e in eta_list[i])
        res = monodromy(eta, state, steps_per_period=steps_per_period, keep_matrix=False)
        try:
            lam, _ = leading_exponent(res, min_ratio)
            simple = True
        except SimplicityError:
            lam, simple = complex(res.exponents[0]), False
        lam = _unwrap(lam, ref)
        if simple:
            ref = lam
        out[i] = SweepPoint(eta, lam, res.ratio, res.beta_gap, simple)
    return out  # type: ignore[return-value]


def fit_quadratic(points: list[SweepPoint]) -> tuple[Array, Array]:
    """Least-squares fit of ``-i a.eta - eta^T A eta`` to the simple sweep points.

    Real and imaginary parts are fitted jointly; ``A`` is symmetric.
    """
    pts = [p for p in points if p.simple]
    if not pts:
        raise ValueError("no simple sweep points to fit")
    d = len(pts[0].eta)
    pairs = [(j, k) for j in range(d) for k in range(j, d)]
    rows, rhs = [], []
    for p in pts:
        e = np.asarray(p.eta)
        # Im lambda = -a.eta
        rows.append(np.concatenate([-e, np.zeros(len(pairs))]))
        rhs.append(p.lam.imag)
        quad = [-(e[j] * e[k] * (1.0 if j == k else 2.0)) for j, k in pairs]
        rows.append(np.concatenate([np.zeros(d), quad]))
        rhs.append(p.lam.real)
    M = np.array(rows)
    scale = np.abs(M).max(axis=0)
    scale[scale == 0] = 1.0
    sol, *_ = np.linalg.lstsq(M / scale, np.array(rhs), rcond=None)
    sol = sol / scale
    a = sol[:d]
    A = np.zeros((d, d))
    for (j, k), v in zip(pairs, sol[d:]):
        A[j, k] = A[k, j] = v
    return a, A


def model_exponent(eta, a: Array, A: Array) -> complex:
    e = np.asarray(eta, float)
    return complex(-1j * (a @ e) - e @ A @ e)


def _rel(x: Array, ref: Array, floor: float) -> float:
    return float(np.abs(np.asarray(x) - np.asarray(ref)).max() / max(np.abs(ref).max(), floor))


def log_slope(x: Array, y: Array) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])


def dispersion_sweep(eta_list, state, coeffs: DispersionCoefficients,
                     steps_per_period: int = 16, points: list[SweepPoint] | None = None) -> dict:
    """Compare the sweep route with the perturbation route.

    The report holds the fitted coefficients, the relative agreement with the
    perturbation coefficients (the drift agreement uses an absolute floor of
    ``1e-6`` relative to ``A``), the cubic-remainder slope of
    ``|lambda - model|`` against ``|eta'|``, and the pointwise check
    ``Re lambda <= -0.9 kappa0 gamma^2 / (2 nu) |eta'|^2``.
    """
    p = state.params
    if points is None:
        points = sweep_exponents(eta_list, state, steps_per_period)
    a_fit, A_fit = fit_quadratic(points)
    simple = [q for q in points if q.simple]
    radii = np.array([np.linalg.norm(q.eta) for q in simple])
    rem = np.array([abs(q.lam - model_exponent(q.eta, coeffs.a, coeffs.A)) for q in simple])
    # pair +eta and -eta at the same radius for the slope
    uniq = np.unique(np.round(radii, 14))
    rem_r = np.array([rem[np.isclose(radii, r)].max() for r in uniq])
    slope = log_slope(uniq, np.maximum(rem_r, 1e-300)) if len(uniq) >= 2 else float("nan")
    g2nu = p.gamma**2 / p.nu
    bound = [q.lam.real <= -0.9 * coeffs.kappa0_hat * g2nu / 2.0 * float(np.dot(q.eta, q.eta))
             for q in simple]
    A_scale = float(np.abs(coeffs.A).max())
    a_err = float(np.abs(a_fit - coeffs.a).max()) / max(float(np.abs(coeffs.a).max()), 1e-6 * A_scale)
    # sign calibration: which candidate matches the fit
    cand_err = {k: _rel(v, A_fit, 1e-300) for k, v in coeffs.candidates.items()}
    sym = []
    for q in simple:
        mirror = [r for r in simple if np.allclose(r.eta, -np.asarray(q.eta))]
        if mirror:
            r = mirror[0]
            sym.append(max(abs(q.lam.real - r.lam.real), abs(q.lam.imag + r.lam.imag)))
    return {
        "eta": [list(q.eta) for q in points],
        "lambda": [[q.lam.real, q.lam.imag] for q in points],
        "ratio": [q.ratio for q in points],
        "simple": [q.simple for q in points],
        "a_fit": a_fit.tolist(),
        "A_fit": A_fit.tolist(),
        "a_rel_err": a_err,
        "A_rel_err": _rel(coeffs.A, A_fit, 1e-300),
        "candidate_rel_err": cand_err,
        "matching_sign": min(cand_err, key=cand_err.get),
        "remainder": rem.tolist(),
        "remainder_radii": uniq.tolist(),
        "remainder_by_radius": rem_r.tolist(),
        "remainder_slope": slope,
        "bound_ok": bool(all(bound)),
        "bound_each": [bool(b) for b in bound],
        "mirror_defect": float(max(sym)) if sym else 0.0,
    }


def scan_r0(state, direction: int = 0, min_ratio: float = 1.5, fractions=None,
            steps_per_period: int = 16) -> tuple[float, list[tuple[float, float]]]:
    """Largest sampled radius along one axis with multiplier ratio at least ``min_ratio``.

    Radii are scanned in increasing order; the scan stops at the first failure.
    """
    alpha = state.params.alpha
    d = len(alpha)
    if fractions is None:
        fractions = np.linspace(0.05, 1.0, 20)
    r0, hist = 0.0, []
    for f in fractions:
        r = f * alpha[direction] / 2.0
        e = [0.0] * d
        e[direction] = r
        res = monodromy(tuple(e), state, steps_per_period=steps_per_period, keep_matrix=False)
        hist.append((r, res.ratio))
        if res.ratio < min_ratio:
            break
        r0 = r
    return r0, hist


def continuity_constants(state, radii, u0: Array, direction: int = 0, steps_per_period: int = 16,
                         tol: float = 1e-8) -> list[dict]:
    """``|u_eta - u0|`` in the time-averaged second-order norm divided by ``|eta|`` at each radius."""
    from .floquet import eigenfunction_u_eta

    g = state.grid
    d = g.dim_n - 1
    out = []
    for r in radii:
        e = [0.0] * d
        e[direction] = float(r)
        res = monodromy(tuple(e), state, steps_per_period=steps_per_period, keep_matrix=False)
        u, lam, resid = eigenfunction_u_eta(tuple(e), res, state, tol=tol)
        diff = u - u0
        phi, w = g.blocks(diff)
        val = g.triple_norm(phi, 2, kind="phi").value ** 2 / state.params.gamma**2
        val = val + g.triple_norm(w, 2, kind="w").value ** 2
        dist = float(np.sqrt(np.mean(val)))
        out.append({"radius": float(r), "distance": dist, "C": dist / float(r),
                    "lambda": [lam.real, lam.imag], "eigen_residual": resid})
    return out


def cell_proximity(cell: CellSolution, stokes: StokesCell, grid) -> float:
    """``int_0^1 |grad(W1 - W~)|^2 dt`` for the rescaled velocity correctors of one direction."""
    _, w = cell.scaled(grid)
    diff = w - stokes.W[cell.k][None]
    full = grid.to_full_w(diff)
    total = 0.0
    for a in range(grid.dim_n):
        total += np.abs(grid.deriv_full(full, a)) ** 2
    val = grid.integrate_full(total)
    return float(np.mean(val.sum(axis=-1)))
