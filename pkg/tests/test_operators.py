"""Nonlinear operator identities against independent quadrature oracles.

The oracle strategy: draw band-limited fields from the same seed on the
working grid and on a grid with twice the resolution.  On the fine grid every
pointwise product involved is exactly resolved, so a plain Riemann sum there
integrates the true trigonometric integrand to machine precision.  The working
grid value must agree even though it dealiases and projects.
"""
import numpy as np
import pytest

from chnslab.grid import (GridSpec, NonSolenoidalError, ScalarField,
                          VelocityField, inner, l2_norm, random_scalar,
                          random_solenoidal)
from chnslab.operators import (Params, chemical_potential, capillary_force,
                               convection, double_well, energy, lyapunov,
                               minus_laplacian, scalar_advection,
                               stokes_operator, require_solenoidal)

TWO_PI = 2.0 * np.pi
CUT = 5  # products of three such fields stay below every Nyquist involved


def _pair_of_grids():
    return GridSpec(48, 48, TWO_PI), GridSpec(96, 96, TWO_PI)


def _ddx(g, a):
    return np.fft.ifft2(1j * g.kx * np.fft.fft2(a)).real


def _ddy(g, a):
    return np.fft.ifft2(1j * g.ky * np.fft.fft2(a)).real


def test_double_well_derivative_consistent():
    pot = double_well()
    pot.validate()
    s = np.linspace(-1.5, 1.5, 7)
    assert np.allclose(pot.F_eval(s), s * s * (s * s - 1.0))
    assert np.allclose(pot.f_eval(s), 4.0 * s ** 3 - 2.0 * s)


def test_potential_spec_rejects_mismatched_derivative():
    from chnslab.operators import PotentialSpec
    bad = PotentialSpec(F_eval=lambda s: s ** 2, f_eval=lambda s: 3.0 * s)
    with pytest.raises(ValueError):
        bad.validate()


def test_stokes_operator_eigenfunction():
    g = GridSpec(32, 32, TWO_PI)
    u = VelocityField(g, np.sin(2.0 * g.y), np.zeros(g.shape))
    got = stokes_operator(u)
    assert np.allclose(got.ux, 4.0 * u.ux, atol=1e-10)
    assert np.allclose(got.uy, 0.0, atol=1e-12)


def test_stokes_operator_energy_identity():
    # <A u, u> = ||grad u||^2 for divergence-free u
    g = GridSpec(32, 32, TWO_PI)
    u = random_solenoidal(g, np.random.default_rng(1), 6)
    lhs = inner(stokes_operator(u), u)
    gux = _ddx(g, u.ux), _ddy(g, u.ux)
    guy = _ddx(g, u.uy), _ddy(g, u.uy)
    rhs = g.cell_area * np.sum(gux[0] ** 2 + gux[1] ** 2 + guy[0] ** 2 + guy[1] ** 2)
    assert abs(lhs - rhs) < 1e-10 * max(rhs, 1.0)


def test_stokes_operator_rejects_divergent_input():
    g = GridSpec(16, 16, TWO_PI)
    with pytest.raises(NonSolenoidalError):
        stokes_operator(VelocityField(g, np.sin(g.x), np.zeros(g.shape)))


def test_minus_laplacian_annihilates_constants():
    g = GridSpec(16, 16, TWO_PI)
    out = minus_laplacian(ScalarField(g, np.full(g.shape, 2.5)))
    assert np.allclose(out.values, 0.0, atol=1e-13)


def test_minus_laplacian_self_adjoint():
    g = GridSpec(32, 32, TWO_PI)
    rng = np.random.default_rng(2)
    f, h = random_scalar(g, rng, 6), random_scalar(g, rng, 6)
    assert abs(inner(minus_laplacian(f), h) - inner(f, minus_laplacian(h))) < 1e-10


def test_convection_quadrature_oracle():
    gw, gf = _pair_of_grids()
    worst = 0.0
    for i in range(20):
        u = random_solenoidal(gw, np.random.default_rng(100 + i), CUT)
        v = random_solenoidal(gw, np.random.default_rng(200 + i), CUT)
        w = random_solenoidal(gw, np.random.default_rng(300 + i), CUT)
        uf = random_solenoidal(gf, np.random.default_rng(100 + i), CUT)
        vf = random_solenoidal(gf, np.random.default_rng(200 + i), CUT)
        wf = random_solenoidal(gf, np.random.default_rng(300 + i), CUT)
        integrand = ((uf.ux * _ddx(gf, vf.ux) + uf.uy * _ddy(gf, vf.ux)) * wf.ux
                     + (uf.ux * _ddx(gf, vf.uy) + uf.uy * _ddy(gf, vf.uy)) * wf.uy)
        oracle = gf.cell_area * float(np.sum(integrand))
        got = inner(convection(u, v), w)
        worst = max(worst, abs(got - oracle) / max(abs(oracle), 1.0))
    assert worst < 1e-9


def test_convection_skew_symmetry():
    g = GridSpec(48, 48, TWO_PI)
    for i in range(20):
        rng = np.random.default_rng(400 + i)
        u = random_solenoidal(g, rng, CUT)
        v = random_solenoidal(g, rng, CUT)
        scale = max(l2_norm(u) * l2_norm(v) ** 2, 1e-30)
        assert abs(inner(convection(u, v), v)) < 1e-9 * scale
        # trilinear antisymmetry in the last two slots
        w = random_solenoidal(g, rng, CUT)
        assert abs(inner(convection(u, v), w)
                   + inner(convection(u, w), v)) < 1e-9


def test_convection_of_shear_flow_is_zero():
    g = GridSpec(32, 32, TWO_PI)
    u = VelocityField(g, np.sin(g.y), np.zeros(g.shape))
    out = convection(u, u)
    assert l2_norm(out) < 1e-12


def test_convection_rejects_divergent_advecting_field():
    g = GridSpec(16, 16, TWO_PI)
    bad = VelocityField(g, np.sin(g.x), np.zeros(g.shape))
    ok = VelocityField(g, np.sin(g.y), np.zeros(g.shape))
    with pytest.raises(NonSolenoidalError):
        convection(bad, ok)


def test_scalar_advection_quadrature_oracle():
    gw, gf = _pair_of_grids()
    worst = 0.0
    for i in range(20):
        u = random_solenoidal(gw, np.random.default_rng(500 + i), CUT)
        f = random_scalar(gw, np.random.default_rng(600 + i), CUT)
        m = random_scalar(gw, np.random.default_rng(700 + i), CUT)
        uf = random_solenoidal(gf, np.random.default_rng(500 + i), CUT)
        ff = random_scalar(gf, np.random.default_rng(600 + i), CUT)
        mf = random_scalar(gf, np.random.default_rng(700 + i), CUT)
        integrand = (uf.ux * _ddx(gf, ff.values)
                     + uf.uy * _ddy(gf, ff.values)) * mf.values
        oracle = gf.cell_area * float(np.sum(integrand))
        got = inner(scalar_advection(u, f), m)
        worst = max(worst, abs(got - oracle) / max(abs(oracle), 1.0))
    assert worst < 1e-9


def test_scalar_advection_skew_symmetry_and_constants():
    g = GridSpec(48, 48, TWO_PI)
    for i in range(20):
        rng = np.random.default_rng(800 + i)
        u = random_solenoidal(g, rng, CUT)
        f = random_scalar(g, rng, CUT)
        assert abs(inner(scalar_advection(u, f), f)) < 1e-9
    const = ScalarField(g, np.full(g.shape, 0.4))
    assert l2_norm(scalar_advection(u, const)) < 1e-13


def test_capillary_force_quadrature_oracle():
    gw, gf = _pair_of_grids()
    worst = 0.0
    for i in range(20):
        m = random_scalar(gw, np.random.default_rng(900 + i), CUT)
        f = random_scalar(gw, np.random.default_rng(1000 + i), CUT)
        u = random_solenoidal(gw, np.random.default_rng(1100 + i), CUT)
        mf = random_scalar(gf, np.random.default_rng(900 + i), CUT)
        ff = random_scalar(gf, np.random.default_rng(1000 + i), CUT)
        uf = random_solenoidal(gf, np.random.default_rng(1100 + i), CUT)
        integrand = mf.values * (_ddx(gf, ff.values) * uf.ux
                                 + _ddy(gf, ff.values) * uf.uy)
        oracle = gf.cell_area * float(np.sum(integrand))
        got = inner(capillary_force(m, f), u)
        worst = max(worst, abs(got - oracle) / max(abs(oracle), 1.0))
    assert worst < 1e-9


def test_capillary_transport_duality():
    # <B2(mu, f), u> = <B1(u, f), mu> closes the energy exchange
    g = GridSpec(48, 48, TWO_PI)
    for i in range(20):
        rng = np.random.default_rng(1200 + i)
        m = random_scalar(g, rng, CUT)
        f = random_scalar(g, rng, CUT)
        u = random_solenoidal(g, rng, CUT)
        lhs = inner(capillary_force(m, f), u)
        rhs = inner(scalar_advection(u, f), m)
        assert abs(lhs - rhs) < 1e-9 * max(abs(lhs), 1.0)


def test_capillary_force_of_constant_is_zero():
    g = GridSpec(16, 16, TWO_PI)
    m = ScalarField(g, np.sin(g.x))
    const = ScalarField(g, np.ones(g.shape))
    assert l2_norm(capillary_force(m, const)) < 1e-13


def test_chemical_potential_on_constants(pot):
    g = GridSpec(16, 16, TWO_PI)
    zero = chemical_potential(ScalarField.zeros(g), pot)
    assert np.allclose(zero.values, 0.0, atol=1e-13)
    one = chemical_potential(ScalarField(g, np.ones(g.shape)), pot)
    assert np.allclose(one.values, 2.0, atol=1e-12)  # f(1) = 4 - 2


def test_chemical_potential_linearization(pot):
    g = GridSpec(32, 32, TWO_PI)
    eps = 1e-6
    phi = ScalarField(g, eps * np.cos(g.x))
    mu = chemical_potential(phi, pot)
    # f'(0) = -2, so mu ~ (|k|^2 - 2) phi for a single unit mode
    assert np.allclose(mu.values, -phi.values, atol=1e-4 * eps)


def test_chemical_potential_pointwise_formula(pot):
    g = GridSpec(48, 48, TWO_PI)
    phi = ScalarField(g, 0.3 * np.cos(g.x) + 0.2 * np.sin(2.0 * g.y))
    mu = chemical_potential(phi, pot)
    expected = (0.3 * np.cos(g.x) + 0.8 * np.sin(2.0 * g.y)
                + 4.0 * phi.values ** 3 - 2.0 * phi.values)
    assert np.allclose(mu.values, expected, atol=1e-10)


def test_energy_closed_forms(pot):
    g = GridSpec(32, 32, TWO_PI)
    zero = energy(ScalarField.zeros(g), VelocityField.zeros(g), pot)
    assert zero == (0.0, 0.0, 0.0)
    # F(1) = 0, so a uniform phi = 1 state has no interface energy
    one = energy(ScalarField(g, np.ones(g.shape)), VelocityField.zeros(g), pot)
    assert abs(one.e_phi) < 1e-12
    # F(1/sqrt(2)) = -1/4 over the box area
    half = ScalarField(g, np.full(g.shape, 1.0 / np.sqrt(2.0)))
    got = energy(half, VelocityField.zeros(g), pot)
    assert abs(got.e_phi + 0.25 * TWO_PI ** 2) < 1e-10


def test_energy_matches_quadrature(pot):
    g = GridSpec(48, 48, TWO_PI)
    rng = np.random.default_rng(13)
    phi = random_scalar(g, rng, CUT, amplitude=0.8)
    u = random_solenoidal(g, rng, CUT, amplitude=0.5)
    got = energy(phi, u, pot)
    gx = _ddx(g, phi.values)
    gy = _ddy(g, phi.values)
    e_phi = g.cell_area * np.sum(0.5 * (gx ** 2 + gy ** 2)
                                 + pot.F_eval(phi.values))
    e_kin = 0.5 * g.cell_area * np.sum(u.ux ** 2 + u.uy ** 2)
    assert abs(got.e_phi - e_phi) < 1e-10 * max(abs(e_phi), 1.0)
    assert abs(got.e_kin - e_kin) < 1e-12 * max(e_kin, 1.0)
    assert got.e_total == got.e_phi + got.e_kin


def test_first_variation_of_interface_energy(pot):
    """<mu(phi), psi> equals the central difference of the energy."""
    g = GridSpec(64, 64, TWO_PI)
    eps = 1e-5
    u0 = VelocityField.zeros(g)
    for i in range(10):
        rng = np.random.default_rng(2000 + i)
        phi = random_scalar(g, rng, CUT)
        psi = random_scalar(g, rng, CUT)
        lhs = inner(chemical_potential(phi, pot), psi)
        e_plus = energy(phi + psi * eps, u0, pot).e_phi
        e_minus = energy(phi - psi * eps, u0, pot).e_phi
        rhs = (e_plus - e_minus) / (2.0 * eps)
        assert abs(lhs - rhs) <= 1e-6 * max(abs(rhs), 1e-30)


def test_lyapunov_weighting(pot):
    g = GridSpec(32, 32, TWO_PI)
    rng = np.random.default_rng(14)
    phi = random_scalar(g, rng, CUT, amplitude=0.5)
    u = random_solenoidal(g, rng, CUT, amplitude=0.5)
    p = Params(nu=1.0, mobility=1.0, capillary=3.0, R=0.0)
    e = energy(phi, u, pot)
    assert lyapunov(phi, u, pot, p) == 3.0 * e.e_phi + e.e_kin


def test_params_validation():
    with pytest.raises(ValueError):
        Params(nu=0.0)
    with pytest.raises(ValueError):
        Params(mobility=-1.0)
    with pytest.raises(ValueError):
        Params(capillary=0.0)
    with pytest.raises(ValueError):
        Params(R=-0.5)


def test_require_solenoidal_accepts_zero_field():
    g = GridSpec(16, 16, TWO_PI)
    require_solenoidal(VelocityField.zeros(g))
