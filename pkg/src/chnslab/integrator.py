"""Semi-implicit time stepper for the coupled phase-field/flow system.

First-order IMEX scheme: the fourth-order interface term and the viscous term
are implicit (both diagonal in spectral space), transport, self-advection, the
capillary force and the bulk nonlinearity are explicit, and a linear
stabilization S * (-Laplace)(phi_new - phi_old) is added to the phase
equation.  The velocity update is Leray-projected every step.  The mean of
phi is conserved exactly: the implicit operators annihilate the mean mode and
the advection term is mean-free by construction.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Protocol, Sequence

import numpy as np

from .grid import GridSpec, ScalarField, VelocityField, l2_norm, div
from .operators import Params, PotentialSpec, double_well, require_solenoidal
from .util import atomic_write_bytes

# public CSV schema, then internal columns used by cost and audit quadratures
DIAG_COLUMNS_PUBLIC = ("t", "mean_phi", "E_phi", "E_kin", "E_total", "u_L2",
                       "phi_H1", "control_L2")
DIAG_COLUMNS = DIAG_COLUMNS_PUBLIC + ("phi_L2", "grad_mu_L2", "grad_u_L2")
_COL = {name: i for i, name in enumerate(DIAG_COLUMNS)}

SNAPSHOT_MAGIC = b"CHNS1\n"
SNAPSHOT_VERSION = 1


class BlowUpError(RuntimeError):
    """The discrete solution left the configured stability region."""

    def __init__(self, t: float, message: str):
        super().__init__(f"blow-up detected at t={t:.6g}: {message}")
        self.t = t


@dataclass(frozen=True)
class State:
    """Instantaneous state (t, phi, u) on one grid."""

    t: float
    phi: ScalarField
    u: VelocityField

    def __post_init__(self) -> None:
        if self.phi.grid != self.u.grid:
            raise ValueError("phi and u live on different grids")

    @property
    def grid(self) -> GridSpec:
        return self.phi.grid


@dataclass(frozen=True)
class SchemeConfig:
    """Time step, stabilization strength, de-aliasing switch, blow-up cap."""

    dt: float
    stabilization: float = 2.0
    dealias: bool = True
    blowup_cap: float = 1e6

    def __post_init__(self) -> None:
        if not (self.dt > 0.0 and np.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.stabilization < 0.0:
            raise ValueError("stabilization must be nonnegative")
        if not (self.blowup_cap > 0.0):
            raise ValueError("blow-up cap must be positive")


class Forcing(Protocol):
    """Piecewise-constant divergence-free forcing schedule."""

    breakpoints: tuple[float, ...]

    def value_at(self, t: float) -> VelocityField: ...


@dataclass(frozen=True)
class Trajectory:
    """Snapshots plus per-step diagnostics (rows at every visited time)."""

    states: tuple[State, ...]
    diagnostics: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return self.diagnostics[:, _COL[name]]


class _Workspace:
    """Cached spectral tables for one (grid, params, scheme) combination."""

    def __init__(self, g: GridSpec, nu: float, mobility: float,
                 stabilization: float, dealias: bool):
        self.g = g
        self.nu = nu
        self.mobility = mobility
        self.stab = stabilization
        self.mask = g.dealias_mask if dealias else np.ones(g.shape, dtype=bool)
        self._factors: dict[float, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def factors(self, h: float):
        got = self._factors.get(h)
        if got is None:
            k2 = self.g.k2
            den_phi = 1.0 + h * self.mobility * k2 * k2 + h * self.stab * k2
            num_phi = 1.0 + h * self.stab * k2
            den_u = 1.0 + h * self.nu * k2
            got = (den_phi, num_phi, den_u)
            if len(self._factors) < 64:
                self._factors[h] = got
        return got


@lru_cache(maxsize=32)
def _workspace(g: GridSpec, nu: float, mobility: float,
               stabilization: float, dealias: bool) -> _Workspace:
    return _Workspace(g, nu, mobility, stabilization, dealias)


class _StateEval:
    """Physical fields, chemical potential and diagnostics of one state."""

    __slots__ = ("phi", "ux", "uy", "mu_h", "diag")

    def __init__(self, ws: _Workspace, pot: PotentialSpec,
                 phi_h: np.ndarray, ux_h: np.ndarray, uy_h: np.ndarray):
        g = ws.g
        self.phi = np.fft.ifft2(phi_h).real
        self.ux = np.fft.ifft2(ux_h).real
        self.uy = np.fft.ifft2(uy_h).real
        f_h = ws.mask * np.fft.fft2(pot.f_eval(self.phi))
        self.mu_h = g.k2 * phi_h + f_h

        w = g.spectral_weight
        k2 = g.k2
        p2 = (phi_h * phi_h.conj()).real
        u2 = (ux_h * ux_h.conj()).real + (uy_h * uy_h.conj()).real
        m2 = (self.mu_h * self.mu_h.conj()).real
        phi_l2 = np.sqrt(w * np.sum(p2))
        phi_h1s = np.sqrt(w * np.sum(k2 * p2))
        u_l2 = np.sqrt(w * np.sum(u2))
        grad_u = np.sqrt(w * np.sum(k2 * u2))
        grad_mu = np.sqrt(w * np.sum(k2 * m2))
        e_phi = 0.5 * phi_h1s ** 2 + g.cell_area * float(np.sum(pot.F_eval(self.phi)))
        e_kin = 0.5 * u_l2 ** 2
        mean_phi = phi_h[0, 0].real / (g.nx * g.ny)
        # order matches DIAG_COLUMNS, control_L2 filled by the caller
        self.diag = [mean_phi, e_phi, e_kin, e_phi + e_kin, u_l2,
                     float(np.hypot(phi_l2, phi_h1s)), 0.0, phi_l2, grad_mu, grad_u]


def _check_stable(ev: _StateEval, t: float, cap: float) -> None:
    u_l2 = ev.diag[4]
    phi_h1 = ev.diag[5]
    if not np.all(np.isfinite(ev.diag)):
        raise BlowUpError(t, "non-finite diagnostics")
    if u_l2 > cap or phi_h1 > cap:
        raise BlowUpError(t, f"||u||={u_l2:.3e}, ||phi||_H1={phi_h1:.3e} exceed cap {cap:.3e}")


def _advance(ws: _Workspace, pot: PotentialSpec, p: Params, h: float,
             phi_h: np.ndarray, ux_h: np.ndarray, uy_h: np.ndarray,
             ev: _StateEval, fx_h: Optional[np.ndarray], fy_h: Optional[np.ndarray]):
    """One step of length h from the evaluated state."""
    g = ws.g
    kx, ky, k2, inv_k2 = g.kx, g.ky, g.k2, g.inv_k2
    mask = ws.mask

    dphix = np.fft.ifft2(1j * kx * phi_h).real
    dphiy = np.fft.ifft2(1j * ky * phi_h).real

    # transport u . grad phi, mean-free
    b1_h = mask * np.fft.fft2(ev.ux * dphix + ev.uy * dphiy)
    b1_h[0, 0] = 0.0

    # capillary force mu grad phi, mean-free (projection applied with the rest)
    mu = np.fft.ifft2(ev.mu_h).real
    b2x_h = mask * np.fft.fft2(mu * dphix)
    b2y_h = mask * np.fft.fft2(mu * dphiy)
    b2x_h[0, 0] = 0.0
    b2y_h[0, 0] = 0.0

    # self-advection (u . grad) u, mean-free
    duxx = np.fft.ifft2(1j * kx * ux_h).real
    duxy = np.fft.ifft2(1j * ky * ux_h).real
    duyx = np.fft.ifft2(1j * kx * uy_h).real
    duyy = np.fft.ifft2(1j * ky * uy_h).real
    bx_h = mask * np.fft.fft2(ev.ux * duxx + ev.uy * duxy)
    by_h = mask * np.fft.fft2(ev.ux * duyx + ev.uy * duyy)
    bx_h[0, 0] = 0.0
    by_h[0, 0] = 0.0

    den_phi, num_phi, den_u = ws.factors(h)

    f_h = ev.mu_h - k2 * phi_h  # the de-aliased bulk term, recovered exactly
    phi_new = (num_phi * phi_h - h * (b1_h + p.mobility * k2 * f_h)) / den_phi

    rx = ux_h + h * (-bx_h + p.capillary * b2x_h + (fx_h if fx_h is not None else 0.0))
    ry = uy_h + h * (-by_h + p.capillary * b2y_h + (fy_h if fy_h is not None else 0.0))
    s = (kx * rx + ky * ry) * inv_k2
    ux_new = (rx - kx * s) / den_u
    uy_new = (ry - ky * s) / den_u
    return phi_new, ux_new, uy_new


def step(s: State, u_value: Optional[VelocityField], p: Params, c: SchemeConfig,
         pot: Optional[PotentialSpec] = None) -> State:
    """Advance one full step of length c.dt under constant forcing u_value."""
    pot = pot if pot is not None else double_well()
    g = s.grid
    ws = _workspace(g, p.nu, p.mobility, c.stabilization, c.dealias)
    fx_h = fy_h = None
    if u_value is not None:
        require_solenoidal(u_value, "control forcing")
        fx_h = np.fft.fft2(u_value.ux)
        fy_h = np.fft.fft2(u_value.uy)
    phi_h = np.fft.fft2(s.phi.values)
    ux_h = np.fft.fft2(s.u.ux)
    uy_h = np.fft.fft2(s.u.uy)
    ev = _StateEval(ws, pot, phi_h, ux_h, uy_h)
    _check_stable(ev, s.t, c.blowup_cap)
    phi_h, ux_h, uy_h = _advance(ws, pot, p, c.dt, phi_h, ux_h, uy_h, ev, fx_h, fy_h)
    ev2 = _StateEval(ws, pot, phi_h, ux_h, uy_h)
    t2 = s.t + c.dt
    _check_stable(ev2, t2, c.blowup_cap)
    return State(t2, ScalarField(g, ev2.phi), VelocityField(g, ev2.ux, ev2.uy))


def _segments(tau: float, t_end: float, control: Optional[Forcing]) -> list[tuple[float, float]]:
    tol = 1e-12 * max(1.0, abs(t_end), abs(tau))
    knots = [tau]
    if control is not None:
        for b in sorted(control.breakpoints):
            if b > knots[-1] + tol and b < t_end - tol:
                knots.append(float(b))
    knots.append(t_end)
    return [(knots[i], knots[i + 1]) for i in range(len(knots) - 1)]


def simulate(s0: State, t_end: float, p: Params, c: SchemeConfig,
             pot: Optional[PotentialSpec] = None, control: Optional[Forcing] = None,
             snapshot_every: int = 0) -> Trajectory:
    """Integrate from s0.t to t_end, landing exactly on t_end and on every
    control breakpoint.  snapshot_every = k stores every k-th visited state
    (0: endpoints only); the initial and final states are always stored.

    Raises BlowUpError when a norm leaves the configured cap.
    """
    pot = pot if pot is not None else double_well()
    g = s0.grid
    tau = s0.t
    tol = 1e-12 * max(1.0, abs(t_end), abs(tau))
    if t_end < tau - tol:
        raise ValueError(f"t_end={t_end} precedes the initial time {tau}")
    ws = _workspace(g, p.nu, p.mobility, c.stabilization, c.dealias)

    phi_h = np.fft.fft2(s0.phi.values)
    ux_h = np.fft.fft2(s0.u.ux)
    uy_h = np.fft.fft2(s0.u.uy)
    ev = _StateEval(ws, pot, phi_h, ux_h, uy_h)
    _check_stable(ev, tau, c.blowup_cap)

    rows: list[list[float]] = []
    states: list[State] = []

    def control_norm(t: float) -> float:
        if control is None:
            return 0.0
        return l2_norm(control.value_at(t))

    def push(t: float, e: _StateEval, keep_state: bool) -> None:
        row = [t] + e.diag
        row[_COL["control_L2"]] = control_norm(t)
        rows.append(row)
        if keep_state:
            states.append(State(t, ScalarField(g, e.phi), VelocityField(g, e.ux, e.uy)))

    push(tau, ev, True)
    if abs(t_end - tau) <= tol:
        return Trajectory(tuple(states), np.asarray(rows, dtype=np.float64))

    step_index = 0
    for (a, b) in _segments(tau, t_end, control):
        fx_h = fy_h = None
        if control is not None:
            uval = control.value_at(a)
            require_solenoidal(uval, "control forcing")
            if uval.grid != g:
                raise ValueError("control field grid does not match the state grid")
            fx_h = np.fft.fft2(uval.ux)
            fy_h = np.fft.fft2(uval.uy)
        i = 0
        while True:
            t_cur = a + i * c.dt if i else a
            rem = b - t_cur
            if rem <= 0.0:
                break
            landing = rem <= c.dt * (1.0 + 1e-9)
            h = rem if landing else c.dt
            phi_h, ux_h, uy_h = _advance(ws, pot, p, h, phi_h, ux_h, uy_h, ev, fx_h, fy_h)
            i += 1
            step_index += 1
            t_new = b if landing else a + i * c.dt
            ev = _StateEval(ws, pot, phi_h, ux_h, uy_h)
            _check_stable(ev, t_new, c.blowup_cap)
            is_last = landing and b >= t_end - tol
            keep = is_last or (snapshot_every > 0 and step_index % snapshot_every == 0)
            push(t_new, ev, keep)
            if landing:
                break

    return Trajectory(tuple(states), np.asarray(rows, dtype=np.float64))


# -- initial conditions --------------------------------------------------------

def rest_state(g: GridSpec, t: float = 0.0) -> State:
    return State(t, ScalarField.zeros(g), VelocityField.zeros(g))


def spinodal_state(g: GridSpec, amplitude: float = 0.01, seed: int = 0,
                   t: float = 0.0) -> State:
    """Smooth random phase noise at rest: white noise shaped by a Gaussian
    spectral envelope exp(-j^2/4), truncated at |j| <= n/4, rescaled so the
    pointwise standard deviation equals the amplitude.  The envelope keeps the
    energy in slowly relaxing modes so the initial transient stays resolved at
    the time steps this scheme is meant for."""
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal(g.shape)
    cut = min(g.nx, g.ny) // 4
    jx = np.fft.fftfreq(g.nx, d=1.0 / g.nx)[:, None]
    jy = np.fft.fftfreq(g.ny, d=1.0 / g.ny)[None, :]
    j2 = jx * jx + jy * jy
    env = np.exp(-j2 / 4.0) * ((np.abs(jx) <= cut) & (np.abs(jy) <= cut))
    phi = np.fft.ifft2(env * np.fft.fft2(raw)).real
    sd = phi.std()
    if sd > 0.0:
        phi *= amplitude / sd
    return State(t, ScalarField(g, phi), VelocityField.zeros(g))


# -- snapshot binary format ------------------------------------------------------

def snapshot_bytes(s: State) -> bytes:
    g = s.grid
    head = SNAPSHOT_MAGIC + struct.pack("<IIIdd", SNAPSHOT_VERSION, g.nx, g.ny, g.L, s.t)
    return (head
            + s.phi.values.astype("<f8").tobytes(order="C")
            + s.u.ux.astype("<f8").tobytes(order="C")
            + s.u.uy.astype("<f8").tobytes(order="C"))


def write_snapshot(path: str, s: State) -> None:
    atomic_write_bytes(path, snapshot_bytes(s))


def read_snapshot(path: str) -> State:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:len(SNAPSHOT_MAGIC)] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a state snapshot (bad magic)")
    off = len(SNAPSHOT_MAGIC)
    version, nx, ny, L, t = struct.unpack_from("<IIIdd", blob, off)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    off += struct.calcsize("<IIIdd")
    n = nx * ny
    need = off + 3 * n * 8
    if len(blob) != need:
        raise ValueError(f"{path}: truncated snapshot ({len(blob)} bytes, expected {need})")
    g = GridSpec(nx, ny, L)

    def block(i: int) -> np.ndarray:
        a = np.frombuffer(blob, dtype="<f8", count=n, offset=off + i * n * 8)
        return a.reshape(nx, ny).astype(np.float64)

    return State(t, ScalarField(g, block(0)), VelocityField(g, block(1), block(2)))


def diagnostics_csv_text(traj: Trajectory) -> str:
    idx = [_COL[name] for name in DIAG_COLUMNS_PUBLIC]
    lines = [",".join(DIAG_COLUMNS_PUBLIC)]
    for row in traj.diagnostics:
        lines.append(",".join(repr(float(row[i])) for i in idx))
    return "\n".join(lines) + "\n"


def write_diagnostics_csv(path: str, traj: Trajectory) -> None:
    from .util import atomic_write_text
    atomic_write_text(path, diagnostics_csv_text(traj))
