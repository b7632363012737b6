"""Discrete Bloch transform on a finite patch of lattice cells.

A patch holds ``M`` copies of the base cell in every periodic direction.
The dual cell is sampled at the ``M`` points ``eta_j = alpha_j * m / M`` with
``m`` running over ``fftfreq`` order, so every sample lies in
``[-alpha_j/2, alpha_j/2)``.  With the normalization used here the transform
is unitary:

    (T phi)(x', eta) = M^{-(n-1)/2} sum_l phi(x' + l.P) exp(-i eta.(x' + l.P))

where ``P`` holds the cell periods.  The continuum factor ``|Q*|^{-1/2}``
corresponds to the quadrature weight ``|Q*| / M^{n-1}`` of the dual cell.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import numpy.typing as npt

Array = npt.NDArray


@dataclass(frozen=True)
class LatticeSampling:
    """Layout of a patch of ``cells`` lattice cells per horizontal direction.

    Sample arrays have one leading axis per horizontal direction of length
    ``cells[j] * n_h[j]``; any trailing axes (wall-normal nodes, components)
    are carried along unchanged.
    """

    alpha: tuple[float, ...]
    n_h: tuple[int, ...]
    cells: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "n_h", tuple(int(v) for v in self.n_h))
        object.__setattr__(self, "cells", tuple(int(v) for v in self.cells))
        if not (len(self.alpha) == len(self.n_h) == len(self.cells)):
            raise ValueError("alpha, n_h and cells must have one entry per horizontal direction")
        if any(m < 1 for m in self.cells) or any(v < 1 for v in self.n_h):
            raise ValueError("cell counts and sample counts must be positive")

    @classmethod
    def from_grid(cls, grid, cells: int | Sequence[int]) -> "LatticeSampling":
        if isinstance(cells, (int, np.integer)):
            cells = (int(cells),) * len(grid.alpha)
        return cls(grid.alpha, grid.n_h, tuple(cells))

    @property
    def n_dirs(self) -> int:
        return len(self.alpha)

    @property
    def periods(self) -> tuple[float, ...]:
        return tuple(2.0 * np.pi / a for a in self.alpha)

    @property
    def patch_shape(self) -> tuple[int, ...]:
        return tuple(m * n for m, n in zip(self.cells, self.n_h))

    def cell_coords(self) -> list[Array]:
        """Horizontal node coordinates of the base cell, one 1D array per direction."""
        return [p * np.arange(n) / n for p, n in zip(self.periods, self.n_h)]

    def patch_coords(self) -> list[Array]:
        return [m * p * np.arange(m * n) / (m * n)
                for m, p, n in zip(self.cells, self.periods, self.n_h)]

    def eta_axes(self) -> list[Array]:
        """Dual-cell samples per direction, in FFT order."""
        return [a * np.fft.fftfreq(m) for a, m in zip(self.alpha, self.cells)]

    def eta_points(self) -> Array:
        """All dual samples as an array of shape ``(*cells, n_dirs)``."""
        axes = np.meshgrid(*self.eta_axes(), indexing="ij")
        return np.stack(axes, axis=-1)

    def _check(self, shape: tuple[int, ...], lead: tuple[int, ...], what: str) -> None:
        if tuple(shape[: len(lead)]) != lead:
            raise ValueError(f"{what} has leading shape {tuple(shape[:len(lead)])}, expected {lead}")

    def _phase(self, eta: Sequence[float], trailing: int) -> Array:
        """``exp(-i eta.x')`` on the base cell, broadcastable against cell data."""
        coords = np.meshgrid(*self.cell_coords(), indexing="ij")
        arg = sum(e * x for e, x in zip(eta, coords))
        return np.exp(-1j * arg).reshape(arg.shape + (1,) * trailing)


def _split_cells(data: Array, samp: LatticeSampling) -> Array:
    """Reshape patch data to ``(M1, n1, M2, n2, ..., rest)`` then to ``(M1, M2, .., n1, n2, .., rest)``."""
    d = samp.n_dirs
    shape = []
    for m, n in zip(samp.cells, samp.n_h):
        shape += [m, n]
    data = data.reshape(tuple(shape) + data.shape[d:])
    order = [2 * j for j in range(d)] + [2 * j + 1 for j in range(d)]
    order += list(range(2 * d, data.ndim))
    return data.transpose(order)


def _join_cells(data: Array, samp: LatticeSampling) -> Array:
    d = samp.n_dirs
    order = []
    for j in range(d):
        order += [j, d + j]
    order += list(range(2 * d, data.ndim))
    data = data.transpose(order)
    return data.reshape(samp.patch_shape + data.shape[2 * d:])


def bloch_forward(samples: Array, samp: LatticeSampling) -> Array:
    """Transform patch samples to cell functions indexed by the dual samples.

    Returns an array of shape ``(*cells, *n_h, rest...)``: entry ``[m]`` is the
    cell function at ``eta_points()[m]``.
    """
    samples = np.asarray(samples)
    samp._check(samples.shape, samp.patch_shape, "patch data")
    d = samp.n_dirs
    cells = _split_cells(samples, samp)
    # sum over lattice translations: exp(-i eta_m . l P) = exp(-2 pi i m l / M)
    hat = np.fft.fftn(cells, axes=tuple(range(d)), norm="ortho")
    trailing = samples.ndim - d
    out = np.empty(hat.shape, dtype=complex)
    for idx in np.ndindex(*samp.cells):
        eta = [ax[i] for ax, i in zip(samp.eta_axes(), idx)]
        out[idx] = hat[idx] * samp._phase(eta, trailing)
    return out


def bloch_inverse(cell_functions: Array, samp: LatticeSampling) -> Array:
    """Inverse of :func:`bloch_forward`: rebuild the patch samples."""
    cell_functions = np.asarray(cell_functions)
    samp._check(cell_functions.shape, samp.cells + samp.n_h, "cell functions")
    d = samp.n_dirs
    trailing = cell_functions.ndim - 2 * d
    tmp = np.empty(cell_functions.shape, dtype=complex)
    for idx in np.ndindex(*samp.cells):
        eta = [ax[i] for ax, i in zip(samp.eta_axes(), idx)]
        tmp[idx] = cell_functions[idx] * np.conj(samp._phase(eta, trailing))
    cells = np.fft.ifftn(tmp, axes=tuple(range(d)), norm="ortho")
    return _join_cells(cells, samp)


def bloch_at(samples: Array, samp: LatticeSampling, eta: Sequence[float]) -> Array:
    """Transform at an arbitrary dual point, with the same normalization.

    Used to check quasi-periodicity in ``eta``.
    """
    samples = np.asarray(samples)
    samp._check(samples.shape, samp.patch_shape, "patch data")
    d = samp.n_dirs
    cells = _split_cells(samples, samp)
    acc = np.zeros(cells.shape[d:], dtype=complex)
    for l in np.ndindex(*samp.cells):
        shift = sum(e * li * p for e, li, p in zip(eta, l, samp.periods))
        acc += cells[l] * np.exp(-1j * shift)
    acc /= np.sqrt(np.prod(samp.cells))
    return acc * samp._phase(eta, samples.ndim - d)


def parseval_defect(samples: Array, samp: LatticeSampling) -> float:
    """Relative difference of ``sum |phi|^2`` over the patch and over all cell functions."""
    lhs = float(np.sum(np.abs(samples) ** 2))
    rhs = float(np.sum(np.abs(bloch_forward(samples, samp)) ** 2))
    return abs(lhs - rhs) / max(lhs, 1e-300)
