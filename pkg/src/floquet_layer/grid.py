"""Spectral discretization of the periodic layer cell.

The cell is a product of periodic intervals of length ``2 pi / alpha_j`` and
the wall-normal interval ``(0, 1)``.  Horizontal directions use Fourier
collocation on an odd number of points.  The wall-normal direction uses
Chebyshev-Gauss-Lobatto nodes.

Velocity-type fields vanish on the walls and are stored on interior nodes.
Density-type fields are stored on the same interior nodes and interpolated
by polynomials of degree ``n_z - 3`` (a staggered pair that has no spurious
pressure modes).  Integrals over the interior use the Fejer rule of the second
kind, which is exact for derivatives of wall-vanishing polynomials, so the
discrete flux form conserves mass to rounding.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import numpy.typing as npt

Array = npt.NDArray


# ---------------------------------------------------------------- 1D building blocks

def cheb_nodes01(n_z: int) -> Array:
    """Gauss-Lobatto nodes on [0, 1] in ascending order."""
    n = n_z - 1
    return 0.5 * (1.0 - np.cos(np.pi * np.arange(n_z) / n))


def cheb_diff01(n_z: int) -> Array:
    """Chebyshev differentiation matrix on the ascending [0, 1] nodes."""
    n = n_z - 1
    x = np.cos(np.pi * np.arange(n_z) / n)
    c = np.ones(n_z)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n_z)
    dx = x[:, None] - x[None, :]
    d = np.outer(c, 1.0 / c) / (dx + np.eye(n_z))
    d -= np.diag(d.sum(axis=1))
    # z = (1 - x)/2 flips orientation and halves the length.
    return -2.0 * d


def lagrange_diff(nodes: Array) -> Array:
    """Differentiation matrix of the polynomial interpolant on arbitrary nodes."""
    x = np.asarray(nodes, float)
    dx = x[:, None] - x[None, :]
    np.fill_diagonal(dx, 1.0)
    w = 1.0 / dx.prod(axis=1)
    d = (w[None, :] / w[:, None]) / dx
    np.fill_diagonal(d, 0.0)
    d -= np.diag(d.sum(axis=1))
    return d


def lagrange_eval(nodes: Array, targets: Array) -> Array:
    """Matrix evaluating the interpolant on ``nodes`` at ``targets``."""
    x = np.asarray(nodes, float)
    out = np.ones((len(targets), len(x)))
    for j in range(len(x)):
        for k in range(len(x)):
            if k != j:
                out[:, j] *= (targets - x[k]) / (x[j] - x[k])
    return out


def interp_weights01(nodes: Array) -> Array:
    """Interpolatory quadrature weights on [0, 1] for the given nodes."""
    x = 1.0 - 2.0 * np.asarray(nodes, float)
    m = len(x)
    vander = np.polynomial.chebyshev.chebvander(x, m - 1)
    k = np.arange(m)
    with np.errstate(divide="ignore"):
        moments = np.where(k % 2 == 0, 2.0 / (1.0 - k.astype(float) ** 2), 0.0)
    return 0.5 * np.linalg.solve(vander.T, moments)


def fourier_diff(n: int, length: float) -> Array:
    """First-derivative Fourier collocation matrix on ``n`` (odd) uniform points."""
    if n % 2 == 0:
        raise ValueError("Fourier collocation requires an odd number of points")
    k = np.fft.fftfreq(n, d=1.0 / n) * (2.0 * np.pi / length)
    eye = np.eye(n)
    return np.real(np.fft.ifft(1j * k[:, None] * np.fft.fft(eye, axis=0), axis=0))


def time_derivative(samples: Array, order: int = 1, axis: int = 0) -> Array:
    """Spectral derivative of uniform samples of a period-1 function."""
    if order == 0:
        return np.array(samples, copy=True)
    n = samples.shape[axis]
    k = np.fft.fftfreq(n, d=1.0 / n)
    symbol = (2j * np.pi * k) ** order
    if n % 2 == 0 and order % 2 == 1:
        symbol[n // 2] = 0.0
    shape = [1] * samples.ndim
    shape[axis] = n
    out = np.fft.ifft(np.fft.fft(samples, axis=axis) * symbol.reshape(shape), axis=axis)
    return out.real if np.isrealobj(samples) else out


def time_interpolate(samples: Array, t: float | Array, axis: int = 0) -> Array:
    """Trigonometric interpolation of uniform period-1 samples at times ``t``."""
    n = samples.shape[axis]
    k = np.fft.fftfreq(n, d=1.0 / n)
    coef = np.fft.fft(samples, axis=axis) / n
    tt = np.atleast_1d(np.asarray(t, float))
    phase = np.exp(2j * np.pi * np.outer(tt, k))
    if n % 2 == 0:
        # Split the Nyquist coefficient symmetrically so that real data stay real.
        phase[:, n // 2] = np.cos(np.pi * n * tt)
    coef = np.moveaxis(coef, axis, 0)
    out = np.tensordot(phase, coef, axes=(1, 0))
    if np.isrealobj(samples):
        out = out.real
    if np.ndim(t) == 0:
        out = out[0]
    return out


# ---------------------------------------------------------------- the grid

@dataclass(frozen=True)
class BlochParam:
    """Bloch parameter with a membership test for the dual cell."""

    eta: tuple[float, ...]
    alpha: tuple[float, ...]

    def in_dual_cell(self) -> bool:
        return all(-a / 2 <= e < a / 2 for e, a in zip(self.eta, self.alpha))


class CellGrid:
    """Fourier x Chebyshev grid on the periodic cell with packed DOF layout.

    Parameters
    ----------
    alpha : sequence of float
        Lattice frequencies; horizontal periods are ``2 pi / alpha_j``.
    n_h : sequence of int
        Odd number of Fourier points per horizontal direction.
    n_z : int
        Odd number of Gauss-Lobatto nodes, walls included.

    Notes
    -----
    Packed vectors hold ``phi`` first, then ``w_1 .. w_n``; each block is an
    interior-node field flattened with horizontal-major ordering.
    """

    def __init__(self, alpha: Sequence[float], n_h: Sequence[int] | int, n_z: int):
        self.alpha = tuple(float(a) for a in alpha)
        self.dim_n = len(self.alpha) + 1
        if isinstance(n_h, (int, np.integer)):
            n_h = (int(n_h),) * (self.dim_n - 1)
        self.n_h = tuple(int(v) for v in n_h)
        if len(self.n_h) != self.dim_n - 1:
            raise ValueError("n_h must have one entry per horizontal direction")
        if any(v % 2 == 0 or v < 3 for v in self.n_h):
            raise ValueError("horizontal point counts must be odd and >= 3")
        if n_z % 2 == 0 or n_z < 5:
            raise ValueError("n_z must be odd and >= 5")
        self.n_z = int(n_z)
        self.periods = tuple(2.0 * np.pi / a for a in self.alpha)
        self.volume = float(np.prod(self.periods))
        self.x_h = tuple(p * np.arange(n) / n for p, n in zip(self.periods, self.n_h))
        self.z = cheb_nodes01(self.n_z)
        self.z_int = self.z[1:-1]
        self.shape_full = (*self.n_h, self.n_z)
        self.shape_int = (*self.n_h, self.n_z - 2)
        self.n_int = int(np.prod(self.shape_int))
        self.n_full = int(np.prod(self.shape_full))
        self.n_dof = (self.dim_n + 1) * self.n_int

        # 1D operators
        self.dh1 = tuple(fourier_diff(n, p) for n, p in zip(self.n_h, self.periods))
        self.dz_full = cheb_diff01(self.n_z)
        self.dz2_full = self.dz_full @ self.dz_full
        self.dz_w = self.dz_full[1:-1, 1:-1]
        self.dz2_w = self.dz2_full[1:-1, 1:-1]
        self.dz_phi = lagrange_diff(self.z_int)
        self.ext_phi = lagrange_eval(self.z_int, self.z)
        self.wz_full = interp_weights01(self.z)
        self.wz_int = interp_weights01(self.z_int)
        self.wh = tuple(np.full(n, p / n) for n, p in zip(self.n_h, self.periods))

    # ------------------------------------------------------------ layout helpers
    def __repr__(self) -> str:
        return f"CellGrid(alpha={self.alpha}, n_h={self.n_h}, n_z={self.n_z})"

    def _lift(self, op: Array, axis: int, full: bool = False) -> Array:
        shape = self.shape_full if full else self.shape_int
        mats = [np.eye(s) for s in shape]
        mats[axis] = op
        out = mats[0]
        for m in mats[1:]:
            out = np.kron(out, m)
        return out

    @cached_property
    def weights_int(self) -> Array:
        w = self.wz_int
        for wh in reversed(self.wh):
            w = np.multiply.outer(wh, w)
        return w.ravel()

    @cached_property
    def weights_full(self) -> Array:
        w = self.wz_full
        for wh in reversed(self.wh):
            w = np.multiply.outer(wh, w)
        return w.ravel()

    @cached_property
    def hx(self) -> tuple[Array, ...]:
        """Horizontal first derivatives on interior-node scalars."""
        return tuple(self._lift(d, j) for j, d in enumerate(self.dh1))

    @cached_property
    def zw(self) -> Array:
        """Wall-normal derivative of wall-vanishing scalars."""
        return self._lift(self.dz_w, self.dim_n - 1)

    @cached_property
    def zw2(self) -> Array:
        return self._lift(self.dz2_w, self.dim_n - 1)

    @cached_property
    def zphi(self) -> Array:
        """Wall-normal derivative of density-type scalars."""
        return self._lift(self.dz_phi, self.dim_n - 1)

    def blocks(self, u: Array) -> tuple[Array, Array]:
        """Split packed vector(s) (last axis) into ``phi`` and ``w`` (w has a component axis)."""
        u = np.asarray(u)
        phi = u[..., : self.n_int]
        w = u[..., self.n_int:].reshape(*u.shape[:-1], self.dim_n - 1 + 1, self.n_int)
        return phi, w

    def pack(self, phi: Array, w: Array) -> Array:
        phi = np.asarray(phi)
        w = np.asarray(w)
        lead = phi.shape[:-1]
        return np.concatenate([phi, w.reshape(*lead, -1)], axis=-1)

    def to_full_w(self, w: Array) -> Array:
        """Zero-pad interior-node wall-vanishing scalars to all nodes (flattened)."""
        w = np.asarray(w)
        a = w.reshape(*w.shape[:-1], *self.shape_int)
        pad = [(0, 0)] * (a.ndim - 1) + [(1, 1)]
        return np.pad(a, pad).reshape(*w.shape[:-1], self.n_full)

    def to_full_phi(self, phi: Array) -> Array:
        """Extend density-type scalars to all nodes by polynomial interpolation."""
        phi = np.asarray(phi)
        a = phi.reshape(*phi.shape[:-1], *self.shape_int)
        out = np.tensordot(a, self.ext_phi, axes=([-1], [1]))
        return out.reshape(*phi.shape[:-1], self.n_full)

    def interior_of_full(self, f: Array) -> Array:
        f = np.asarray(f)
        a = f.reshape(*f.shape[:-1], *self.shape_full)
        return a[..., 1:-1].reshape(*f.shape[:-1], self.n_int)

    def coords_full(self) -> tuple[Array, ...]:
        return tuple(np.meshgrid(*self.x_h, self.z, indexing="ij"))

    def coords_int(self) -> tuple[Array, ...]:
        return tuple(np.meshgrid(*self.x_h, self.z_int, indexing="ij"))

    # ------------------------------------------------------------ derivatives on fields
    def deriv_full(self, f: Array, axis: int, order: int = 1) -> Array:
        """Spectral derivative of all-node scalar data (flattened last axis)."""
        f = np.asarray(f)
        a = f.reshape(*f.shape[:-1], *self.shape_full)
        lead = a.ndim - self.dim_n
        op = self.dh1[axis] if axis < self.dim_n - 1 else self.dz_full
        for _ in range(order):
            a = np.moveaxis(np.tensordot(op, a, axes=([1], [lead + axis])), 0, lead + axis)
        return a.reshape(f.shape)

    def diff_ops(self, phi: Array, w: Array, eta_prime: Sequence[float] | None = None) -> dict:
        """Bloch-shifted derivatives of a state.

        ``grad`` acts on the density-type scalar ``phi``; ``div``, ``laplace``
        and ``grad_div`` act on the wall-vanishing vector ``w`` (interior nodes).
        """
        eta = self._eta(eta_prime)
        phi = np.asarray(phi)
        w = np.asarray(w)
        n = self.dim_n
        dphi = [self.hx[j] @ phi + 1j * eta[j] * phi if eta[j] else self.hx[j] @ phi
                for j in range(n - 1)] + [self.zphi @ phi]
        dw = self._grad_w_ops(eta)
        div = sum(dw[j] @ w[j] for j in range(n))
        lap = np.stack([sum(self._d2_w(eta, j, j) @ w[i] for j in range(n)) for i in range(n)])
        gdiv = np.stack([sum(self._d2_w(eta, i, j) @ w[j] for j in range(n)) for i in range(n)])
        return {"grad": np.stack(dphi), "div": div, "laplace": lap, "grad_div": gdiv}

    def _eta(self, eta_prime) -> tuple[float, ...]:
        if eta_prime is None:
            return (0.0,) * (self.dim_n - 1)
        eta = tuple(float(e) for e in np.atleast_1d(eta_prime))
        if len(eta) != self.dim_n - 1:
            raise ValueError("eta_prime must have dim_n - 1 entries")
        return eta

    def _grad_w_ops(self, eta) -> list[Array]:
        ops = []
        for j in range(self.dim_n - 1):
            op = self.hx[j]
            if eta[j]:
                op = op + 1j * eta[j] * np.eye(self.n_int)
            ops.append(op)
        ops.append(self.zw)
        return ops

    def _d2_w(self, eta, i: int, j: int) -> Array:
        """Operator for ``d_i d_j`` on wall-vanishing scalars (Bloch shifted)."""
        nz = self.dim_n - 1
        if i == nz and j == nz:
            return self.zw2
        g = self._grad_w_ops(eta)
        if i == nz:
            return self.zw @ g[j]
        if j == nz:
            return g[i] @ self.zw
        return g[i] @ g[j]

    # ------------------------------------------------------------ quadrature and norms
    def mean(self, f: Array) -> Array:
        """Cell average of interior-node data (last axis)."""
        return np.asarray(f) @ self.weights_int / self.volume

    def integrate(self, f: Array) -> Array:
        return np.asarray(f) @ self.weights_int

    def integrate_full(self, f: Array) -> Array:
        return np.asarray(f) @ self.weights_full

    def l2_sq(self, f: Array) -> Array:
        return self.integrate(np.abs(np.asarray(f)) ** 2)

    def norm_gamma_sq(self, u: Array, gamma: float) -> Array:
        """``gamma^-2 |phi|^2 + |w|^2`` in L2 of the cell, for packed vectors."""
        phi, w = self.blocks(u)
        return self.l2_sq(phi) / gamma**2 + self.l2_sq(w).sum(axis=-1)

    def sobolev_sq_full(self, f: Array, k: int) -> Array:
        """``sum_{|beta| <= k} |d^beta f|^2`` for all-node scalar data."""
        f = np.asarray(f)
        total = np.zeros(f.shape[:-1])
        # each multi-index appears once
        for order in range(k + 1):
            for beta in itertools.combinations_with_replacement(range(self.dim_n), order):
                g = f
                for ax in beta:
                    g = self.deriv_full(g, ax)
                total = total + self.integrate_full(np.abs(g) ** 2)
        return total

    def sobolev_sq(self, f: Array, k: int, kind: str = "w") -> Array:
        """Squared H^k norm of interior-node data of the given kind (``"w"`` or ``"phi"``)."""
        full = self.to_full_w(f) if kind == "w" else self.to_full_phi(f)
        return self.sobolev_sq_full(full, k)

    def triple_norm(self, samples: Array, m: int, kind: str = "full",
                    t_index: int | None = None) -> "TripleNorm":
        """``[[f(t)]]_m`` for time samples of scalar or vector data.

        ``samples`` has shape ``(n_t, ..., n_points)`` where the last axis is
        all-node data (``kind="full"``) or interior data of kind ``"w"`` or
        ``"phi"``.  Any middle axes are components and are summed.
        """
        if not 0 <= m <= 5:
            raise ValueError("m must lie in 0..5")
        samples = np.asarray(samples)
        if kind == "w":
            samples = self.to_full_w(samples)
        elif kind == "phi":
            samples = self.to_full_phi(samples)
        n_t = samples.shape[0]
        total = np.zeros(n_t)
        for j in range(m // 2 + 1):
            dt = time_derivative(samples, j, axis=0)
            val = self.sobolev_sq_full(dt, m - 2 * j)
            total += val.reshape(n_t, -1).sum(axis=1)
        flag = _under_resolved(samples, m // 2)
        vals = np.sqrt(total)
        if t_index is not None:
            vals = vals[t_index]
        return TripleNorm(vals, flag)

    # ------------------------------------------------------------ inner products
    def inner_weighted(self, u1: Array, u2: Array, rho_p: Array, pressure, gamma: float) -> complex:
        """Weighted pairing ``int phi1 conj(phi2) p'(rho)/(gamma^2 rho) + rho w1.conj(w2)``."""
        rho = np.asarray(rho_p, float)
        if np.any(rho <= 0):
            raise ValueError("nonpositive density sample: weight undefined")
        p1, w1 = self.blocks(u1)
        p2, w2 = self.blocks(u2)
        c = pressure.dp(rho) / (gamma**2 * rho)
        val = self.integrate(c * p1 * np.conj(p2)) + self.integrate(rho * (w1 * np.conj(w2)).sum(axis=0))
        return complex(val)

    def inner_bogovskii(self, u1: Array, u2: Array, delta: float, bogovskii_op,
                        rho_p: Array, pressure, gamma: float) -> complex:
        """Modified pairing ``<u1,u2> - delta[(w1, B phi2) + (B phi1, w2)]``."""
        p1, w1 = self.blocks(u1)
        p2, w2 = self.blocks(u2)
        base = self.inner_weighted(u1, u2, rho_p, pressure, gamma)
        if delta == 0:
            return base
        if delta < 0:
            raise ValueError("delta must be positive")
        for p in (p1, p2):
            if abs(self.mean(p)) > 1e-10 * (1 + np.sqrt(self.l2_sq(p))):
                raise ValueError("Bogovskii pairing needs mean-zero density components")
        b1 = bogovskii_op(p1)
        b2 = bogovskii_op(p2)
        cross = self.integrate((w1 * np.conj(b2)).sum(axis=0)) + self.integrate((b1 * np.conj(w2)).sum(axis=0))
        return complex(base - delta * cross)


@dataclass(frozen=True)
class TripleNorm:
    value: Array | float
    under_resolved: bool


def _under_resolved(samples: Array, n_deriv: int) -> bool:
    if n_deriv == 0 or samples.shape[0] < 4:
        return False
    spec = np.abs(np.fft.fft(samples, axis=0)) ** 2
    spec = spec.reshape(samples.shape[0], -1).sum(axis=1)
    n = samples.shape[0]
    k = np.abs(np.fft.fftfreq(n, d=1.0 / n))
    tail = spec[k >= n / 4].sum()
    total = spec.sum()
    if total == 0:
        return False
    if tail > 1e-10 * total:
        warnings.warn("time samples do not resolve the requested derivatives", RuntimeWarning)
        return True
    return False
