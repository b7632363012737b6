"""Floquet-Bloch analysis of a time-periodically forced compressible viscous layer.

The package computes the space-time periodic base flow of an isothermal or
barotropic gas between two plates, builds the linearized operator around it,
and studies the leading Floquet exponent for small Bloch wavenumbers.
"""

import os as _os

# thread count for the BLAS backend; must be set before numpy loads
_threads = _os.environ.get("FLOQUET_LAYER_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .config import (
    ForceMode,
    ForceSpec,
    Params,
    PressureLaw,
    build_force,
    check_regime,
    nondimensionalize,
    regime_threshold,
)
from .grid import CellGrid

__all__ = [
    "CellGrid",
    "ForceMode",
    "ForceSpec",
    "Params",
    "PressureLaw",
    "build_force",
    "check_regime",
    "nondimensionalize",
    "regime_threshold",
]

__version__ = "0.1.0"
