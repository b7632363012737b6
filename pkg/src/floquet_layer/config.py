"""Parameters, pressure laws, body-force specifications and regime checks.

Classes
-------
PressureLaw
    Barotropic pressure law with derivative and averaged-kernel evaluators.
Params
    Non-dimensional parameters of the layer problem.
RegimeReport
    Outcome of the small-Reynolds / small-Mach regime predicate.
ForceMode, ForceSpec
    Truncated Fourier description of the body force.

Functions
---------
nondimensionalize, check_regime, regime_threshold
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import numpy.typing as npt

ArrayLike = npt.ArrayLike
NDArray = npt.NDArray[np.float64]

# Gauss-Legendre nodes mapped to [0, 1]; 24 points integrate polynomials of degree 47 exactly.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)
_THETA = 0.5 * (_GL_X + 1.0)
_THETA_W = 0.5 * _GL_W


@dataclass(frozen=True)
class PressureLaw:
    """Pressure law ``p(rho)`` normalized so that ``p'(1) = 1``.

    ``kind="isothermal"`` gives ``p = rho``; ``kind="power"`` gives
    ``p = rho**kappa / kappa``.
    """

    kind: str = "isothermal"
    kappa: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("isothermal", "power"):
            raise ValueError(f"unknown pressure law kind {self.kind!r}")
        if self.kind == "power" and self.kappa <= 0:
            raise ValueError("power-law exponent kappa must be positive")

    def p(self, rho: ArrayLike) -> NDArray:
        rho = np.asarray(rho, dtype=float)
        if self.kind == "isothermal":
            return rho.copy()
        return rho**self.kappa / self.kappa

    def dp(self, rho: ArrayLike) -> NDArray:
        rho = np.asarray(rho, dtype=float)
        if self.kind == "isothermal":
            return np.ones_like(rho)
        return rho ** (self.kappa - 1.0)

    def d2p(self, rho: ArrayLike) -> NDArray:
        rho = np.asarray(rho, dtype=float)
        if self.kind == "isothermal":
            return np.zeros_like(rho)
        return (self.kappa - 1.0) * rho ** (self.kappa - 2.0)

    def p1(self, rho: ArrayLike, phi: ArrayLike) -> NDArray:
        """Averaged slope ``int_0^1 p'(rho + theta*phi) dtheta``."""
        rho, phi = np.broadcast_arrays(np.asarray(rho, float), np.asarray(phi, float))
        pts = rho[..., None] + _THETA * phi[..., None]
        return self.dp(pts) @ _THETA_W

    def p2(self, rho: ArrayLike, phi: ArrayLike) -> NDArray:
        """Weighted curvature ``int_0^1 (1-theta) p''(rho + theta*phi) dtheta``."""
        rho, phi = np.broadcast_arrays(np.asarray(rho, float), np.asarray(phi, float))
        pts = rho[..., None] + _THETA * phi[..., None]
        return self.d2p(pts) @ (_THETA_W * (1.0 - _THETA))

    def pressure_remainder(self, phi: ArrayLike, gamma: float) -> NDArray:
        """Kernel ``P`` with ``gamma**4 (p(1+s) - p(1) - s) = P * phi**2``, ``s = phi/gamma**2``.

        This is the averaged kernel that appears in the nonlinear momentum
        forcing of the transformed system.
        """
        phi = np.asarray(phi, float)
        return self.p2(np.ones_like(phi), phi / gamma**2)


@dataclass(frozen=True)
class Params:
    """Non-dimensional parameters.

    Attributes
    ----------
    nu, nu_tilde : float
        Shear viscosity and combined viscosity ``nu + bulk part``.
    gamma : float
        Sound-speed parameter; ``gamma**2`` multiplies the pressure gradient.
    S_force : float
        Body-force amplitude.
    mu_star : float
        Admissible upper bound of the viscosity ratio ``mu'/mu``.
    dim_n : int
        Spatial dimension (2 or 3).
    alpha : tuple of float
        Lattice frequencies of the ``n-1`` periodic directions.
    pressure : PressureLaw
    """

    nu: float
    nu_tilde: float
    gamma: float
    S_force: float = 0.0
    mu_star: float = 2.0
    dim_n: int = 2
    alpha: tuple[float, ...] = (0.21,)
    pressure: PressureLaw = field(default_factory=PressureLaw)

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        if self.dim_n not in (2, 3):
            raise ValueError("dim_n must be 2 or 3")
        if len(self.alpha) != self.dim_n - 1:
            raise ValueError("alpha must have dim_n - 1 entries")
        if any(a <= 0 for a in self.alpha):
            raise ValueError("lattice frequencies must be positive")
        if self.nu <= 0 or self.gamma <= 0:
            raise ValueError("nu and gamma must be positive")
        if self.S_force < 0:
            raise ValueError("force amplitude must be nonnegative")
        total = self.nu + self.nu_tilde
        if not (self.nu <= total * (1 + 1e-14) and total <= (2.0 + self.mu_star) * self.nu * (1 + 1e-14)):
            raise ValueError("viscosities violate nu <= nu + nu_tilde <= (2 + mu_star) nu")
        if abs(float(self.pressure.dp(1.0)) - 1.0) > 1e-14:
            raise ValueError("pressure law must satisfy p'(1) = 1")

    @property
    def nu_total(self) -> float:
        return self.nu + self.nu_tilde

    def with_force(self, S_force: float) -> "Params":
        return Params(self.nu, self.nu_tilde, self.gamma, S_force, self.mu_star,
                      self.dim_n, self.alpha, self.pressure)


def nondimensionalize(mu: float, mu_prime: float, rho_star: float, d: float,
                      T_period: float, p_tilde_prime_at_rho_star: float,
                      force_scale: float, *, dim_n: int = 2, mu_star: float = 2.0,
                      alpha: Sequence[float] | None = None,
                      pressure: PressureLaw | None = None) -> Params:
    """Map dimensional inputs to ``Params``.

    ``nu = mu T / (rho* d^2)``, ``nu_tilde = (mu + mu') T / (rho* d^2)``,
    ``gamma = (T/d) sqrt(p~'(rho*))`` and ``S = (T^2/d) * force_scale``.
    """
    if mu <= 0:
        raise ValueError("shear viscosity mu must be positive")
    if (2.0 / dim_n) * mu + mu_prime < 0:
        raise ValueError("bulk viscosity (2/n) mu + mu' must be nonnegative")
    if mu_prime / mu > mu_star:
        raise ValueError(f"viscosity ratio mu'/mu = {mu_prime / mu} exceeds mu_star = {mu_star}")
    if rho_star <= 0 or d <= 0 or T_period <= 0 or p_tilde_prime_at_rho_star <= 0:
        raise ValueError("rho*, d, T and p'(rho*) must be positive")
    scale = T_period / (rho_star * d * d)
    nu = mu * scale
    nu_tilde = (mu + mu_prime) * scale
    gamma = (T_period / d) * math.sqrt(p_tilde_prime_at_rho_star)
    S = (T_period**2 / d) * force_scale
    if alpha is None:
        alpha = (0.21,) * (dim_n - 1)
    return Params(nu, nu_tilde, gamma, S, mu_star, dim_n, tuple(alpha),
                  pressure or PressureLaw())


@dataclass(frozen=True)
class RegimeReport:
    reynolds_value: float
    reynolds_ok: bool
    mach_value: float
    mach_ok: bool
    S: float
    S_threshold: float
    S_ok: bool
    S_threshold_simplified: float
    S_ok_simplified: bool

    @property
    def passed(self) -> bool:
        return self.reynolds_ok and self.mach_ok and self.S_ok

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def regime_threshold(nu: float, nu_tilde: float, gamma: float,
                     eps0: float = 0.1, a_rate: float = 1.0) -> float:
    """Largest admissible force amplitude of the regime predicate."""
    total = nu + nu_tilde
    return eps0 * nu**2 / (gamma**2 * math.sqrt(total)) * math.sqrt(
        -math.expm1(-a_rate * total / gamma**2))


def check_regime(params: Params, nu0: float = 4.0, gamma0: float = 20.0,
                 eps0: float = 0.1, a_rate: float = 1.0) -> RegimeReport:
    """Advisory check of the small-Reynolds / small-Mach / small-force regime."""
    for name, v in (("nu0", nu0), ("gamma0", gamma0), ("eps0", eps0), ("a_rate", a_rate)):
        if v <= 0:
            raise ValueError(f"{name} must be positive")
    total = params.nu_total
    re_val = params.nu**2 / total
    ma_val = params.gamma**2 / total
    thr = regime_threshold(params.nu, params.nu_tilde, params.gamma, eps0, a_rate)
    thr_simple = eps0 * math.sqrt(a_rate) * params.nu**2 / params.gamma**3
    return RegimeReport(re_val, re_val >= nu0, ma_val, ma_val >= gamma0,
                        params.S_force, thr, params.S_force <= thr,
                        thr_simple, params.S_force <= thr_simple)


# Wall-normal profiles on [0, 1]. None of them is required to vanish at the walls.
PROFILES: dict[str, Callable[[NDArray], NDArray]] = {
    "one": lambda z: np.ones_like(z),
    "linear": lambda z: z,
    "bubble": lambda z: 4.0 * z * (1.0 - z),
    "sin1": lambda z: np.sin(np.pi * z),
    "sin2": lambda z: np.sin(2.0 * np.pi * z),
    "cos1": lambda z: np.cos(np.pi * z),
    "cos2": lambda z: np.cos(2.0 * np.pi * z),
    "shifted": lambda z: 1.0 + 0.5 * np.sin(np.pi * z) + 0.25 * z**2,
}


@dataclass(frozen=True)
class ForceMode:
    """One term ``Re(amplitude * exp(i(k.alpha x' + 2 pi m t)) * profile(z)) e_component``."""

    k: tuple[int, ...]
    m: int
    profile: str
    component: int
    amplitude: complex

    def __post_init__(self) -> None:
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))
        if self.profile not in PROFILES:
            raise ValueError(f"unknown wall-normal profile {self.profile!r}")


@dataclass(frozen=True)
class ForceSpec:
    modes: tuple[ForceMode, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "modes", tuple(self.modes))

    @staticmethod
    def default(dim_n: int = 2) -> "ForceSpec":
        """Smooth, time-periodic force with horizontal structure and no reflection symmetry."""
        zero = (0,) * (dim_n - 1)
        one = (1,) + (0,) * (dim_n - 2)
        two = (2,) + (0,) * (dim_n - 2)
        return ForceSpec((
            ForceMode(zero, 1, "sin1", 0, 1.0),
            ForceMode(one, 0, "bubble", 0, 0.5 + 0.3j),
            ForceMode(one, 1, "shifted", dim_n - 1, 0.4j),
            ForceMode(two, 1, "cos1", 0, 0.2),
        ))


@dataclass
class ForceField:
    """Normalized body force sampled at ``n_t`` uniform times on all grid nodes.

    ``samples`` has shape ``(n_t, dim_n, n_full)``; ``raw_norm`` is the norm
    before rescaling.
    """

    samples: NDArray
    raw_norm: float

    @property
    def n_t(self) -> int:
        return self.samples.shape[0]


def force_norm(grid, samples: NDArray) -> float:
    """Space-time norm ``(sum_j int_0^1 |d_t^j G|^2_{H^{3-2j}} dt)^(1/2)``, j = 0, 1, 2.

    The ``j = 2`` term is taken in L2.
    """
    from .grid import time_derivative

    total = 0.0
    for j, k in ((0, 3), (1, 1), (2, 0)):
        d = time_derivative(samples, j, axis=0)
        total += float(np.mean(grid.sobolev_sq_full(d, k).sum(axis=-1)))
    return math.sqrt(total)


def build_force(spec: ForceSpec, grid, n_time_samples: int = 64) -> ForceField:
    """Sample the force on the space-time grid and rescale it to unit norm."""
    if n_time_samples < 1:
        raise ValueError("n_time_samples must be positive")
    n = grid.dim_n
    coords = grid.coords_full()
    xh, z = coords[:-1], coords[-1]
    t = np.arange(n_time_samples) / n_time_samples
    out = np.zeros((n_time_samples, n) + z.shape)
    for mode in spec.modes:
        if len(mode.k) != n - 1:
            raise ValueError("force wavevector has the wrong dimension")
        if not 0 <= mode.component < n:
            raise ValueError("force component out of range")
        if 2 * abs(mode.m) >= n_time_samples:
            raise ValueError("time sampling does not resolve the force")
        for kk, nh in zip(mode.k, grid.n_h):
            if 2 * abs(kk) >= nh:
                raise ValueError("horizontal grid does not resolve the force")
        phase = sum(kk * a * x for kk, a, x in zip(mode.k, grid.alpha, xh))
        prof = PROFILES[mode.profile](z)
        sig = np.exp(1j * (phase[None] + 2 * np.pi * mode.m * t.reshape((-1,) + (1,) * z.ndim)))
        out[:, mode.component] += np.real(complex(mode.amplitude) * sig * prof)
    samples = out.reshape(n_time_samples, n, -1)
    norm = force_norm(grid, samples)
    if not np.isfinite(norm) or norm < 1e-300:
        raise ValueError("cannot normalize zero field")
    return ForceField(samples / norm, norm)
