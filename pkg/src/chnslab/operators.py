"""Operator dictionary for the coupled phase-field/flow system.

All nonlinear products are formed pointwise on the grid and truncated with the
2/3 rule; outputs that are exactly mean-free on the torus (advection of a
scalar by a divergence-free field, self-advection of a divergence-free field,
the capillary force) have their mean mode zeroed explicitly, which is what the
continuum identities assert.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .grid import (GridSpec, ScalarField, VelocityField, NonSolenoidalError,
                   div, l2_norm, leray_project, require_same_grid)


@dataclass(frozen=True)
class PotentialSpec:
    """Smooth double-well bulk potential with derivative bound data.

    f_eval is the derivative of F_eval; both must accept ndarrays.  growth
    and c_f bound the second derivative: |f''(s)| <= c_f * (1 + |s|^(growth-1)).
    """

    F_eval: Callable[[np.ndarray], np.ndarray]
    f_eval: Callable[[np.ndarray], np.ndarray]
    growth: int = 2
    c_f: float = 24.0

    def __post_init__(self) -> None:
        if self.growth < 1:
            raise ValueError("growth exponent must be >= 1")
        if self.c_f <= 0.0:
            raise ValueError("derivative bound must be positive")

    def validate(self, lo: float = -2.0, hi: float = 2.0, n: int = 100) -> None:
        """Check F' = f by central differences and the growth bound on f''."""
        s = np.linspace(lo, hi, n)
        h = 1e-6 * max(1.0, hi - lo)
        fd = (self.F_eval(s + h) - self.F_eval(s - h)) / (2.0 * h)
        fv = self.f_eval(s)
        scale = np.maximum(np.abs(fv), 1.0)
        if np.max(np.abs(fd - fv) / scale) > 1e-6:
            raise ValueError("F_eval' does not match f_eval")
        fdd = (self.f_eval(s + h) - self.f_eval(s - h)) / (2.0 * h)
        bound = self.c_f * (1.0 + np.abs(s) ** (self.growth - 1))
        if np.any(np.abs(fdd) > bound * (1.0 + 1e-6)):
            raise ValueError("f'' exceeds the declared growth bound")


def double_well() -> PotentialSpec:
    """Default potential F(s) = s^2 (s^2 - 1), f(s) = 4 s^3 - 2 s."""
    return PotentialSpec(
        F_eval=lambda s: s * s * (s * s - 1.0),
        f_eval=lambda s: 4.0 * s ** 3 - 2.0 * s,
        growth=2,
        c_f=24.0,
    )


@dataclass(frozen=True)
class Params:
    """Physical parameters: viscosity, mobility, capillary coupling, control radius."""

    nu: float = 1.0
    mobility: float = 1.0
    capillary: float = 1.0
    R: float = 0.0

    def __post_init__(self) -> None:
        if not (self.nu > 0.0 and np.isfinite(self.nu)):
            raise ValueError(f"viscosity must be positive, got {self.nu}")
        if not (self.mobility > 0.0 and np.isfinite(self.mobility)):
            raise ValueError(f"mobility must be positive, got {self.mobility}")
        if not (self.capillary > 0.0 and np.isfinite(self.capillary)):
            raise ValueError(f"capillary coupling must be positive, got {self.capillary}")
        if not (self.R >= 0.0 and np.isfinite(self.R)):
            raise ValueError(f"control radius must be nonnegative, got {self.R}")


def require_solenoidal(u: VelocityField, what: str = "velocity") -> None:
    scale = l2_norm(u)
    if scale > 0.0 and l2_norm(div(u)) > 1e-8 * scale:
        raise NonSolenoidalError(f"{what} must be divergence-free")


def _fft2(a: np.ndarray) -> np.ndarray:
    return np.fft.fft2(a)


def _real(a: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(a).real


# -- linear operators ---------------------------------------------------------

def stokes_operator(u: VelocityField) -> VelocityField:
    """-P(Laplace u) for divergence-free u (the projection is then a no-op)."""
    require_solenoidal(u)
    g = u.grid
    lap = VelocityField(g, _real(-g.k2 * _fft2(u.ux)), _real(-g.k2 * _fft2(u.uy)))
    return leray_project(-lap)


def minus_laplacian(f: ScalarField) -> ScalarField:
    g = f.grid
    return ScalarField(g, _real(g.k2 * _fft2(f.values)))


# -- bilinear terms -----------------------------------------------------------

def _dealias_spectral(g: GridSpec, prod: np.ndarray) -> np.ndarray:
    return g.dealias_mask * _fft2(prod)


def convection(u: VelocityField, v: VelocityField) -> VelocityField:
    """Projected de-aliased (u . grad) v; u must be divergence-free."""
    require_same_grid(u, v)
    require_solenoidal(u, "advecting velocity")
    g = u.grid
    vxh = _fft2(v.ux)
    vyh = _fft2(v.uy)
    ax = u.ux * _real(1j * g.kx * vxh) + u.uy * _real(1j * g.ky * vxh)
    ay = u.ux * _real(1j * g.kx * vyh) + u.uy * _real(1j * g.ky * vyh)
    axh = _dealias_spectral(g, ax)
    ayh = _dealias_spectral(g, ay)
    axh[0, 0] = 0.0  # self-transport of a solenoidal field integrates to zero
    ayh[0, 0] = 0.0
    s = (g.kx * axh + g.ky * ayh) * g.inv_k2
    return VelocityField(g, _real(axh - g.kx * s), _real(ayh - g.ky * s))


def scalar_advection(u: VelocityField, f: ScalarField) -> ScalarField:
    """De-aliased u . grad f; mean-free since div u = 0."""
    require_same_grid(u, f)
    require_solenoidal(u, "advecting velocity")
    g = u.grid
    fh = _fft2(f.values)
    a = u.ux * _real(1j * g.kx * fh) + u.uy * _real(1j * g.ky * fh)
    ah = _dealias_spectral(g, a)
    ah[0, 0] = 0.0
    return ScalarField(g, _real(ah))


def capillary_force(mu: ScalarField, f: ScalarField) -> VelocityField:
    """Projected de-aliased mu * grad f; mean-free on the torus."""
    require_same_grid(mu, f)
    g = mu.grid
    fh = _fft2(f.values)
    bx = mu.values * _real(1j * g.kx * fh)
    by = mu.values * _real(1j * g.ky * fh)
    bxh = _dealias_spectral(g, bx)
    byh = _dealias_spectral(g, by)
    bxh[0, 0] = 0.0
    byh[0, 0] = 0.0
    s = (g.kx * bxh + g.ky * byh) * g.inv_k2
    return VelocityField(g, _real(bxh - g.kx * s), _real(byh - g.ky * s))


# -- chemical potential and energy --------------------------------------------

def chemical_potential(f: ScalarField, pot: PotentialSpec) -> ScalarField:
    """-Laplace f + f'(phi) with the pointwise nonlinearity de-aliased."""
    g = f.grid
    fh = _fft2(f.values)
    nl = g.dealias_mask * _fft2(pot.f_eval(f.values))
    return ScalarField(g, _real(g.k2 * fh + nl))


class EnergyBreakdown(NamedTuple):
    e_phi: float
    e_kin: float
    e_total: float


def energy(f: ScalarField, u: VelocityField, pot: PotentialSpec) -> EnergyBreakdown:
    """Interface energy 0.5||grad phi||^2 + int F(phi), kinetic energy, and their sum."""
    require_same_grid(f, u)
    g = f.grid
    fh = _fft2(f.values)
    e_grad = 0.5 * g.spectral_weight * float(np.sum(g.k2 * (fh * fh.conj()).real))
    e_bulk = g.cell_area * float(np.sum(pot.F_eval(f.values)))
    e_phi = e_grad + e_bulk
    e_kin = 0.5 * g.cell_area * float(np.sum(u.ux ** 2) + np.sum(u.uy ** 2))
    return EnergyBreakdown(e_phi, e_kin, e_phi + e_kin)


def lyapunov(f: ScalarField, u: VelocityField, pot: PotentialSpec, p: Params) -> float:
    """Weighted functional K * E_phi + E_kin that the dynamics dissipate."""
    e = energy(f, u, pot)
    return p.capillary * e.e_phi + e.e_kin
