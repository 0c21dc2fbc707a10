"""Periodic pseudo-spectral fields on a square box.

Uniform nx-by-ny grid on [0, L)^2, full complex FFTs (numpy), wavenumbers
k_j = 2*pi*j/L in standard FFT ordering.  The Nyquist mode is zeroed in every
derivative so that spectral calculus stays real and skew-symmetric; products
of fields are de-aliased with the 2/3 rule.  The trapezoid rule on this grid
is the spectral quadrature, so discrete inner products of band-limited fields
equal the exact integrals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Union

import numpy as np


class FieldShapeError(ValueError):
    """Field values do not match the grid, or fields live on different grids."""


class NonSolenoidalError(ValueError):
    """A divergence-free field was required."""


class NonZeroMeanError(ValueError):
    """A zero-mean field was required."""


@dataclass(frozen=True)
class GridSpec:
    """Geometry plus cached spectral operators for one periodic grid.

    Wavenumber tables, the de-aliasing mask and quadrature weights are
    computed once; the dataclass compares and hashes on (nx, ny, L) only.
    """

    nx: int
    ny: int
    L: float

    # caches, excluded from comparison
    x: np.ndarray = field(init=False, repr=False, compare=False)
    y: np.ndarray = field(init=False, repr=False, compare=False)
    kx: np.ndarray = field(init=False, repr=False, compare=False)
    ky: np.ndarray = field(init=False, repr=False, compare=False)
    k2: np.ndarray = field(init=False, repr=False, compare=False)
    inv_k2: np.ndarray = field(init=False, repr=False, compare=False)
    dealias_mask: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.nx % 2 != 0 or self.ny % 2 != 0 or self.nx < 8 or self.ny < 8:
            raise ValueError(f"grid must be even and at least 8x8, got {self.nx}x{self.ny}")
        if not (self.L > 0.0 and np.isfinite(self.L)):
            raise ValueError(f"box size must be positive, got {self.L}")
        nx, ny, L = self.nx, self.ny, self.L
        xs = np.arange(nx) * (L / nx)
        ys = np.arange(ny) * (L / ny)
        x, y = np.meshgrid(xs, ys, indexing="ij")

        kx1 = 2.0 * np.pi * np.fft.fftfreq(nx, d=L / nx)
        ky1 = 2.0 * np.pi * np.fft.fftfreq(ny, d=L / ny)
        # Nyquist column zeroed: odd derivatives of real fields stay real
        kx1[nx // 2] = 0.0
        ky1[ny // 2] = 0.0
        kx, ky = np.meshgrid(kx1, ky1, indexing="ij")
        k2 = kx * kx + ky * ky
        inv_k2 = np.zeros_like(k2)
        nz = k2 > 0.0
        inv_k2[nz] = 1.0 / k2[nz]

        # 2/3 rule: keep |j| <= n/3 in index units on each axis
        jx = np.fft.fftfreq(nx, d=1.0 / nx)
        jy = np.fft.fftfreq(ny, d=1.0 / ny)
        mask = (np.abs(jx)[:, None] <= nx / 3.0) & (np.abs(jy)[None, :] <= ny / 3.0)

        for name, val in (("x", x), ("y", y), ("kx", kx), ("ky", ky),
                          ("k2", k2), ("inv_k2", inv_k2), ("dealias_mask", mask)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def cell_area(self) -> float:
        return (self.L / self.nx) * (self.L / self.ny)

    @property
    def spectral_weight(self) -> float:
        # Parseval: ||f||^2 = cell_area/(nx*ny) * sum |fhat|^2
        return self.cell_area / (self.nx * self.ny)


def _check_values(grid: GridSpec, values: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != grid.shape:
        raise FieldShapeError(f"{what} shape {arr.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite values")
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real scalar samples on the grid."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", _check_values(self.grid, self.values, "scalar field"))

    def __add__(self, other: "ScalarField") -> "ScalarField":
        require_same_grid(self, other)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        require_same_grid(self, other)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, a: float) -> "ScalarField":
        return ScalarField(self.grid, self.values * float(a))

    __rmul__ = __mul__

    def __neg__(self) -> "ScalarField":
        return ScalarField(self.grid, -self.values)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: GridSpec, fn) -> "ScalarField":
        return cls(grid, np.asarray(fn(grid.x, grid.y), dtype=np.float64))


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Real vector samples (ux, uy) on the grid."""

    grid: GridSpec
    ux: np.ndarray
    uy: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "ux", _check_values(self.grid, self.ux, "velocity x"))
        object.__setattr__(self, "uy", _check_values(self.grid, self.uy, "velocity y"))

    def __add__(self, other: "VelocityField") -> "VelocityField":
        require_same_grid(self, other)
        return VelocityField(self.grid, self.ux + other.ux, self.uy + other.uy)

    def __sub__(self, other: "VelocityField") -> "VelocityField":
        require_same_grid(self, other)
        return VelocityField(self.grid, self.ux - other.ux, self.uy - other.uy)

    def __mul__(self, a: float) -> "VelocityField":
        a = float(a)
        return VelocityField(self.grid, self.ux * a, self.uy * a)

    __rmul__ = __mul__

    def __neg__(self) -> "VelocityField":
        return VelocityField(self.grid, -self.ux, -self.uy)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "VelocityField":
        z = np.zeros(grid.shape)
        return cls(grid, z, z.copy())


@dataclass(frozen=True, eq=False)
class SpectralCoeffs:
    """Raw (unnormalized) FFT coefficients of a scalar field."""

    grid: GridSpec
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data, dtype=np.complex128)
        if arr.shape != self.grid.shape:
            raise FieldShapeError(f"coefficient shape {arr.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "data", arr)


Field = Union[ScalarField, VelocityField]


def require_same_grid(a, b) -> None:
    if a.grid != b.grid:
        raise FieldShapeError("fields live on different grids")


# -- transforms ---------------------------------------------------------------

def to_spectral(f: ScalarField) -> SpectralCoeffs:
    return SpectralCoeffs(f.grid, np.fft.fft2(f.values))


def to_physical(c: SpectralCoeffs) -> ScalarField:
    return ScalarField(c.grid, np.fft.ifft2(c.data).real)


# -- calculus -----------------------------------------------------------------

def grad(f: ScalarField) -> VelocityField:
    g = f.grid
    fh = np.fft.fft2(f.values)
    return VelocityField(g,
                         np.fft.ifft2(1j * g.kx * fh).real,
                         np.fft.ifft2(1j * g.ky * fh).real)


def div(v: VelocityField) -> ScalarField:
    g = v.grid
    d = 1j * g.kx * np.fft.fft2(v.ux) + 1j * g.ky * np.fft.fft2(v.uy)
    return ScalarField(g, np.fft.ifft2(d).real)


def laplacian(f: ScalarField) -> ScalarField:
    g = f.grid
    return ScalarField(g, np.fft.ifft2(-g.k2 * np.fft.fft2(f.values)).real)


def perp_grad(psi: ScalarField) -> VelocityField:
    """Rotated gradient (d_y psi, -d_x psi); exactly divergence-free."""
    g = psi.grid
    ph = np.fft.fft2(psi.values)
    return VelocityField(g,
                         np.fft.ifft2(1j * g.ky * ph).real,
                         np.fft.ifft2(-1j * g.kx * ph).real)


def leray_project(v: VelocityField) -> VelocityField:
    """Remove the gradient part; identity on the mean mode."""
    g = v.grid
    vx = np.fft.fft2(v.ux)
    vy = np.fft.fft2(v.uy)
    s = (g.kx * vx + g.ky * vy) * g.inv_k2
    return VelocityField(g,
                         np.fft.ifft2(vx - g.kx * s).real,
                         np.fft.ifft2(vy - g.ky * s).real)


def dealias(f: Field) -> Field:
    g = f.grid
    if isinstance(f, ScalarField):
        return ScalarField(g, np.fft.ifft2(g.dealias_mask * np.fft.fft2(f.values)).real)
    return VelocityField(g,
                         np.fft.ifft2(g.dealias_mask * np.fft.fft2(f.ux)).real,
                         np.fft.ifft2(g.dealias_mask * np.fft.fft2(f.uy)).real)


def fractional_laplacian(f: ScalarField, s: float, strict: bool = False) -> ScalarField:
    """(-Laplace)^s on the zero-mean subspace, symbol |k|^(2s).

    The mean mode is annihilated.  With strict=True a nonzero-mean input is
    rejected; otherwise the operator acts on the zero-mean part.
    """
    g = f.grid
    fh = np.fft.fft2(f.values)
    if strict:
        m = abs(fh[0, 0]) / (g.nx * g.ny)
        scale = float(np.max(np.abs(f.values))) or 1.0
        if m > 1e-10 * scale:
            raise NonZeroMeanError(f"fractional_laplacian requires zero mean, got {m:.3e}")
    mult = np.zeros_like(g.k2)
    nz = g.k2 > 0.0
    mult[nz] = g.k2[nz] ** s
    return ScalarField(g, np.fft.ifft2(mult * fh).real)


# -- quadrature, inner products, norms ---------------------------------------

def inner(a: Field, b: Field) -> float:
    require_same_grid(a, b)
    w = a.grid.cell_area
    if isinstance(a, ScalarField) and isinstance(b, ScalarField):
        return float(w * np.sum(a.values * b.values))
    if isinstance(a, VelocityField) and isinstance(b, VelocityField):
        return float(w * (np.sum(a.ux * b.ux) + np.sum(a.uy * b.uy)))
    raise TypeError("inner product requires two fields of the same kind")


def mean(f: ScalarField) -> float:
    return float(np.mean(f.values))


def l2_norm(f: Field) -> float:
    if isinstance(f, ScalarField):
        return float(np.sqrt(f.grid.cell_area * np.sum(f.values ** 2)))
    return float(np.sqrt(f.grid.cell_area * (np.sum(f.ux ** 2) + np.sum(f.uy ** 2))))


def _spec_sq(g: GridSpec, arr: np.ndarray) -> np.ndarray:
    fh = np.fft.fft2(arr)
    return (fh * fh.conj()).real


def h1_seminorm(f: Field) -> float:
    g = f.grid
    if isinstance(f, ScalarField):
        total = np.sum(g.k2 * _spec_sq(g, f.values))
    else:
        total = np.sum(g.k2 * (_spec_sq(g, f.ux) + _spec_sq(g, f.uy)))
    return float(np.sqrt(g.spectral_weight * total))


def h1_norm(f: Field) -> float:
    return float(np.hypot(l2_norm(f), h1_seminorm(f)))


def h2_norm(f: Field) -> float:
    """Full Sobolev norm (||f||^2 + ||grad f||^2 + ||D^2 f||^2)^(1/2)."""
    g = f.grid
    wgt = 1.0 + g.k2 + g.k2 ** 2
    if isinstance(f, ScalarField):
        total = np.sum(wgt * _spec_sq(g, f.values))
    else:
        total = np.sum(wgt * (_spec_sq(g, f.ux) + _spec_sq(g, f.uy)))
    return float(np.sqrt(g.spectral_weight * total))


def l4_norm(f: Field) -> float:
    w = f.grid.cell_area
    if isinstance(f, ScalarField):
        return float((w * np.sum(f.values ** 4)) ** 0.25)
    sq = f.ux ** 2 + f.uy ** 2
    return float((w * np.sum(sq ** 2)) ** 0.25)


def linf_norm(f: Field) -> float:
    if isinstance(f, ScalarField):
        return float(np.max(np.abs(f.values)))
    return float(np.sqrt(np.max(f.ux ** 2 + f.uy ** 2)))


def dual_norm(v: VelocityField) -> float:
    """||A^(-1/2) v|| for divergence-free zero-mean v (symbol 1/|k|)."""
    g = v.grid
    scale = l2_norm(v)
    if scale > 0.0:
        dv = div(v)
        if l2_norm(dv) > 1e-8 * scale:
            raise NonSolenoidalError("dual norm requires a divergence-free field")
    vx = np.fft.fft2(v.ux)
    vy = np.fft.fft2(v.uy)
    m = np.hypot(abs(vx[0, 0]), abs(vy[0, 0])) / (g.nx * g.ny)
    if m > 1e-10 * max(scale, 1e-300):
        raise NonZeroMeanError(f"dual norm requires zero mean velocity, got {m:.3e}")
    total = np.sum(g.inv_k2 * ((vx * vx.conj()).real + (vy * vy.conj()).real))
    return float(np.sqrt(g.spectral_weight * total))


# -- random band-limited fields ----------------------------------------------

def _canonical_modes(cutoff: int) -> list[tuple[int, int]]:
    # half-plane representatives in a fixed order, so the same seed yields the
    # same trigonometric polynomial on any grid resolving the cutoff
    out = []
    for jx in range(0, cutoff + 1):
        for jy in range(-cutoff, cutoff + 1):
            if (jx, jy) == (0, 0) or (jx == 0 and jy < 0):
                continue
            out.append((jx, jy))
    return out


def random_scalar(grid: GridSpec, rng: np.random.Generator, cutoff: int,
                  amplitude: float = 1.0) -> ScalarField:
    """Zero-mean Gaussian trig polynomial with modes |jx|, |jy| <= cutoff,
    scaled to L2 norm = amplitude.  The draw depends on the rng state and the
    cutoff only, not on the grid resolution."""
    if cutoff < 1 or cutoff > min(grid.nx, grid.ny) // 2 - 1:
        raise ValueError(f"cutoff {cutoff} not resolvable on grid {grid.shape}")
    modes = _canonical_modes(cutoff)
    draws = rng.standard_normal(2 * len(modes))
    fh = np.zeros(grid.shape, dtype=np.complex128)
    nn = grid.nx * grid.ny
    for i, (jx, jy) in enumerate(modes):
        c = (draws[2 * i] + 1j * draws[2 * i + 1]) / 2.0
        fh[jx % grid.nx, jy % grid.ny] += c * nn
        fh[(-jx) % grid.nx, (-jy) % grid.ny] += np.conj(c) * nn
    f = np.fft.ifft2(fh).real
    nrm = np.sqrt(grid.cell_area * np.sum(f ** 2))
    if nrm > 0.0:
        f *= amplitude / nrm
    return ScalarField(grid, f)


def random_solenoidal(grid: GridSpec, rng: np.random.Generator, cutoff: int,
                      amplitude: float = 1.0) -> VelocityField:
    """Zero-mean divergence-free Gaussian field (rotated gradient of a random
    stream function), scaled to L2 norm = amplitude."""
    psi = random_scalar(grid, rng, cutoff)
    u = perp_grad(psi)
    nrm = l2_norm(u)
    if nrm > 0.0:
        u = u * (amplitude / nrm)
    return u
