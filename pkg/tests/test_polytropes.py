"""Tests for velocity moments, the radial equation, and decoupled solves."""

import numpy as np
import pytest
from scipy.integrate import cumulative_trapezoid

from diskhalo.errors import InfeasibleComponentError, UnboundedStateError
from diskhalo.polytropes import (
    ConstraintVector,
    Exponents,
    Multipliers,
    emden_fowler_solve,
    moment_coefficients,
    rescale_exponents_3d,
    rescale_exponents_flat,
    solve_decoupled_3d,
    solve_decoupled_flat,
    velocity_moments,
)
from diskhalo.potentials import disk_potential
from diskhalo.quadrature import integrate, meridional_grid, radial_grid

from .oracles import moments_3d_reference, moments_flat_reference

# frozen independent quadrature values of (density, kinetic, casimir)
# at gap a = 1, scale lam = 1
MOMENTS_3D = {
    0.5: (6.978864199638882, 3.4894320998194384, 3.48943209981944),
    1.0: (4.739075134035591, 2.0310322003009675, 2.7080429337346232),
    2.2: (2.4739480625842765, 0.7895578923141309, 1.6843901702701478),
}
MOMENTS_FLAT = {
    0.5: (4.188790204786389, 1.6755160819145547, 2.5132741228718345),
    1.0: (np.pi, 1.0471975511965976, 2.0943951023931953),
    2.2: (1.9634954084936205, 0.46749890678419537, 1.495996501709426),
}


# ---------------------------------------------------------------------------
# parameter containers


def test_exponents_validation():
    Exponents(1.0, 0.5)
    with pytest.raises(ValueError):
        Exponents(3.5, 0.5)
    with pytest.raises(ValueError):
        Exponents(0.0, 0.5)
    with pytest.raises(ValueError):
        Exponents(1.0, 2.0)


def test_constraint_vector_validation():
    ConstraintVector(1.0, 1.0, 1.0, 1.0)
    ConstraintVector(1.0, 1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        ConstraintVector(1.0, 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ConstraintVector(-1.0, 1.0, 1.0, 1.0)


# ---------------------------------------------------------------------------
# velocity moments


@pytest.mark.parametrize("k", [0.5, 1.0, 2.2])
def test_moments_3d_frozen_values(k):
    got = velocity_moments(1.0, k, 1.0, "halo")
    for g, e in zip(got, MOMENTS_3D[k]):
        assert g == pytest.approx(e, rel=1e-13)


@pytest.mark.parametrize("k", [0.5, 1.0, 2.2])
def test_moments_flat_frozen_values(k):
    got = velocity_moments(1.0, k, 1.0, "disk")
    for g, e in zip(got, MOMENTS_FLAT[k]):
        assert g == pytest.approx(e, rel=1e-13)


def test_moments_against_direct_quadrature():
    # independent 1d velocity quadrature at non-unit gap and scale
    for k, a, lam in ((0.7, 0.3, 2.0), (1.8, 1.7, 0.4)):
        got = velocity_moments(a, k, lam, "halo")
        ref = moments_3d_reference(k, a, lam)
        for g, e in zip(got, ref):
            assert g == pytest.approx(e, rel=1e-9)
        got = velocity_moments(a, k, lam, "disk")
        ref = moments_flat_reference(k, a, lam)
        for g, e in zip(got, ref):
            assert g == pytest.approx(e, rel=1e-9)


def test_moments_vanish_for_negative_gap():
    for kind in ("halo", "disk"):
        assert velocity_moments(-0.5, 1.0, 1.0, kind) == (0.0, 0.0, 0.0)


def test_moments_scaling_in_lam():
    k = 1.3
    d1 = velocity_moments(1.0, k, 1.0, "halo")
    d2 = velocity_moments(1.0, k, 2.0, "halo")
    assert d2[0] == pytest.approx(d1[0] * 2.0 ** -k, rel=1e-14)
    assert d2[2] == pytest.approx(d1[2] * 2.0 ** -(k + 1.0), rel=1e-14)


def test_moment_coefficients_reject_bad_input():
    with pytest.raises(ValueError):
        moment_coefficients(-1.0, "halo")
    with pytest.raises(ValueError):
        moment_coefficients(1.0, "torus")


# ---------------------------------------------------------------------------
# radial equation


def test_radial_equation_linear_case():
    # n = 1 solves in closed form: y = sin(r)/r with first zero at pi
    sol = emden_fowler_solve(1.0)
    assert abs(sol.radius - np.pi) < 1e-8
    rr = np.linspace(1e-4, sol.radius, 2000)
    assert np.max(np.abs(sol(rr) - np.sin(rr) / rr)) < 1e-8
    assert sol.mass == pytest.approx(np.pi, abs=1e-7)


def test_radial_equation_no_zero_raises():
    with pytest.raises(UnboundedStateError):
        emden_fowler_solve(5.0, r_limit=150.0)


def test_radial_equation_rejects_bad_input():
    with pytest.raises(ValueError):
        emden_fowler_solve(-1.0)
    with pytest.raises(ValueError):
        emden_fowler_solve(1.5, c=-2.0)


def test_radial_equation_absorbs_c():
    # r -> sqrt(c) r maps c to 1: radii shrink like c^(-1/2)
    base = emden_fowler_solve(2.5)
    scaled = emden_fowler_solve(2.5, c=4.0)
    assert scaled.radius == pytest.approx(base.radius / 2.0, rel=1e-9)


def test_radial_equation_amplitude_scaling():
    # y_a(r) = a y(a^((n-1)/2) r) solves the same equation
    n = 2.5
    a = 2.0
    base = emden_fowler_solve(n)
    scaled = emden_fowler_solve(n, y0=a)
    assert scaled.radius == pytest.approx(
        base.radius * a ** (-(n - 1.0) / 2.0), rel=1e-9
    )
    r_test = 0.37 * scaled.radius
    assert scaled(r_test) == pytest.approx(
        a * base(a ** ((n - 1.0) / 2.0) * r_test), rel=1e-8
    )


def test_radial_equation_mass_matches_quadrature():
    sol = emden_fowler_solve(2.5, c=0.7, y0=1.3)
    rg = radial_grid(sol.radius, n=8192, measure="line")
    y = np.maximum(sol(rg.nodes), 0.0)
    m_quad = integrate(0.7 * y ** 2.5 * rg.nodes ** 2, rg)
    assert sol.mass == pytest.approx(m_quad, rel=1e-7)


# ---------------------------------------------------------------------------
# rescaling maps


def test_rescale_map_3d_closed_form():
    # alpha = M^((1-2k)/3) N^((2k+2)/3), beta = M^((k-2)/3) N^(-(k+1)/3)
    k = 1.0
    m_hat, n_hat = 2.0, 3.0
    sol = np.linalg.solve(rescale_exponents_3d(k), np.log([m_hat, n_hat]))
    alpha, beta = np.exp(sol)
    assert alpha == pytest.approx(2.0 ** (-1.0 / 3.0) * 3.0 ** (4.0 / 3.0), rel=1e-12)
    assert beta == pytest.approx(2.0 ** (-1.0 / 3.0) * 3.0 ** (-2.0 / 3.0), rel=1e-12)


def test_rescale_map_flat_closed_form():
    # mu = M^(-kt) N^(kt+1), nu = M^((kt-1)/2) N^(-(kt+1)/2)
    kt = 0.5
    m_hat, n_hat = 2.0, 3.0
    sol = np.linalg.solve(rescale_exponents_flat(kt), np.log([m_hat, n_hat]))
    mu, nu = np.exp(sol)
    assert mu == pytest.approx(2.0 ** -0.5 * 3.0 ** 1.5, rel=1e-12)
    assert nu == pytest.approx(2.0 ** -0.25 * 3.0 ** -0.75, rel=1e-12)


# ---------------------------------------------------------------------------
# decoupled halo


@pytest.fixture(scope="module")
def halo_k1():
    return solve_decoupled_3d(1.0, 1.0, 1.0)


def test_halo_constraints_saturate(halo_k1):
    assert halo_k1.mass == pytest.approx(1.0, rel=1e-8)
    assert halo_k1.norm == pytest.approx(1.0, rel=1e-8)


def test_halo_cutoff_is_negative(halo_k1):
    assert halo_k1.e0 < 0.0
    assert halo_k1.lam > 0.0
    assert halo_k1.e0 == pytest.approx(-halo_k1.mass / halo_k1.radius, rel=1e-12)


def test_halo_virial(halo_k1):
    assert abs(2.0 * halo_k1.ekin + halo_k1.epot) / abs(halo_k1.epot) < 1e-5


def test_halo_multiplier_identities(halo_k1):
    st = halo_k1
    k = st.k
    e0_pred = ((2.0 * k + 5.0) / 3.0 * st.ekin + 2.0 * st.epot) / st.mass
    assert st.e0 == pytest.approx(e0_pred, rel=1e-6)
    lam_pred = 2.0 * (k + 1.0) * st.ekin / (3.0 * st.norm ** ((k + 1.0) / k))
    assert st.lam == pytest.approx(lam_pred, rel=1e-10)


def test_halo_potential_consistency(halo_k1):
    # re-integrate the potential of the returned density profile
    st = halo_k1
    r, rho = st.r, st.rho
    m_in = 4.0 * np.pi * cumulative_trapezoid(r ** 2 * rho, r, initial=0.0)
    outer = 4.0 * np.pi * cumulative_trapezoid(r * rho, r, initial=0.0)
    outer = outer[-1] - outer
    safe = np.where(r > 0.0, r, 1.0)
    u_ind = -m_in / safe - outer
    u_ind[0] = -outer[0]
    assert np.max(np.abs(u_ind - st.u)) / abs(st.e0) < 1e-5


def test_halo_profile_structure(halo_k1):
    st = halo_k1
    assert st.rho[-1] == 0.0
    assert np.all(np.diff(st.u) > 0.0)  # potential increases outward
    assert st.density_at(st.radius * 1.5) == 0.0
    assert st.gap(st.radius * 2.0) < 0.0
    assert st.potential_at(st.radius * 2.0) == pytest.approx(
        -st.mass / (st.radius * 2.0), rel=1e-12
    )


def test_halo_radius_follows_constraint_map(halo_k1):
    # independent re-solve at rescaled constraints: R scales like
    # M^((2k-1)/3) N^(-(2k+2)/3); for k = 1 doubling M and halving N
    # multiplies the radius by 2^(5/3)
    other = solve_decoupled_3d(1.0, 2.0, 0.5)
    assert other.radius / halo_k1.radius == pytest.approx(
        2.0 ** (5.0 / 3.0), rel=1e-9
    )


def test_halo_deposit_mass(halo_k1):
    g = meridional_grid(
        halo_k1.radius * 1.25, halo_k1.radius * 1.25, n_r=128, n_z=128
    )
    hd = halo_k1.halo_density_on(g)
    assert hd.mass() == pytest.approx(halo_k1.mass, rel=2e-3)


def test_halo_infeasible_exponent():
    with pytest.raises(InfeasibleComponentError):
        solve_decoupled_3d(2.6, 1.0, 1.0)
    with pytest.raises(ValueError):
        solve_decoupled_3d(1.0, -1.0, 1.0)


@pytest.mark.parametrize("k", [0.6, 1.7])
def test_halo_other_exponents(k):
    st = solve_decoupled_3d(k, 1.4, 0.8)
    assert st.mass == pytest.approx(1.4, rel=1e-7)
    assert st.norm == pytest.approx(0.8, rel=1e-7)
    assert abs(2.0 * st.ekin + st.epot) / abs(st.epot) < 1e-5


# ---------------------------------------------------------------------------
# decoupled disk


@pytest.fixture(scope="module")
def disk_kt_half():
    return solve_decoupled_flat(0.5, 1.0, 1.0)


def test_disk_constraints_saturate(disk_kt_half):
    assert disk_kt_half.mass == pytest.approx(1.0, rel=1e-9)
    assert disk_kt_half.norm == pytest.approx(1.0, rel=1e-9)


def test_disk_cutoff_is_negative(disk_kt_half):
    assert disk_kt_half.e0 < 0.0
    assert disk_kt_half.lam > 0.0


def test_disk_virial(disk_kt_half):
    st = disk_kt_half
    assert abs(2.0 * st.ekin + st.epot) / abs(st.epot) < 1e-3


def test_disk_multiplier_identities(disk_kt_half):
    st = disk_kt_half
    kt = st.kt
    e0_pred = ((kt + 2.0) * st.ekin + 2.0 * st.epot) / st.mass
    assert st.e0 == pytest.approx(e0_pred, rel=1e-6)
    lam_pred = (kt + 1.0) * st.ekin / st.norm ** ((kt + 1.0) / kt)
    assert st.lam == pytest.approx(lam_pred, rel=1e-10)


def test_disk_self_consistency(disk_kt_half):
    # the fixed point: sigma equals the moment of its own potential's gap
    st = disk_kt_half
    c_d = moment_coefficients(st.kt, "disk")[0]
    u = disk_potential(st.sigma, st.grid)
    model = c_d * st.lam ** -st.kt * np.maximum(st.e0 - u, 0.0) ** (st.kt + 1.0)
    assert np.max(np.abs(model - st.sigma)) / np.max(st.sigma) < 1e-7


def test_disk_radius_follows_constraint_map(disk_kt_half):
    # R scales like M^kt N^(-(kt+1)): doubling M at kt = 1/2 gives 2^(1/2)
    other = solve_decoupled_flat(0.5, 2.0, 1.0)
    assert other.radius / disk_kt_half.radius == pytest.approx(
        np.sqrt(2.0), rel=1e-4
    )


def test_disk_solver_is_deterministic(disk_kt_half):
    again = solve_decoupled_flat(0.5, 1.0, 1.0)
    assert np.array_equal(again.sigma, disk_kt_half.sigma)
    assert again.e0 == disk_kt_half.e0


def test_disk_resolution_stability(disk_kt_half):
    coarse = solve_decoupled_flat(0.5, 1.0, 1.0, n_nodes=384)
    assert coarse.radius == pytest.approx(disk_kt_half.radius, rel=1e-3)
    assert coarse.e0 == pytest.approx(disk_kt_half.e0, rel=1e-3)


def test_disk_support_inside_grid(disk_kt_half):
    st = disk_kt_half
    assert st.radius < st.grid.rmax
    assert st.sigma[-1] == 0.0
    assert st.density_at(st.radius * 1.2) == 0.0


def test_disk_infeasible_exponent():
    with pytest.raises(InfeasibleComponentError):
        solve_decoupled_flat(1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        solve_decoupled_flat(0.5, 0.0, 1.0)


def test_disk_other_exponent():
    st = solve_decoupled_flat(0.3, 2.0, 1.5)
    assert st.mass == pytest.approx(2.0, rel=1e-9)
    assert st.norm == pytest.approx(1.5, rel=1e-9)
    assert abs(2.0 * st.ekin + st.epot) / abs(st.epot) < 1e-3


def test_multipliers_container():
    m = Multipliers(-1.0, 2.0, -0.5, 1.5)
    assert m.e0_halo == -1.0
    assert m.lam_disk == 1.5
