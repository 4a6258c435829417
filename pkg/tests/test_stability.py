"""Perturbation maps, phase-space sampling, and the energy distance."""

import numpy as np
import pytest

from diskhalo.energetics import energy_report
from diskhalo.errors import SupportEscapeError
from diskhalo.stability import (
    Perturbation,
    ShearProfile,
    battery,
    distance_d,
    expansion_check,
    map_jacobians,
    perturb,
    transport,
)


def _profile():
    return ShearProfile(center=(0.01, -0.02), width=0.1, amplitude=0.1)


class TestPerturbationValidation:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            Perturbation(kind="off-plane-tilt", magnitude=0.1)

    def test_unknown_component_rejected(self):
        with pytest.raises(ValueError):
            Perturbation(kind="in-plane-boost", magnitude=0.1, component="bulge")

    def test_negative_magnitude_rejected(self):
        with pytest.raises(ValueError):
            Perturbation(kind="in-plane-boost", magnitude=-0.1)

    def test_zero_direction_rejected(self):
        with pytest.raises(ValueError):
            Perturbation(kind="plane-translation", magnitude=0.1, direction=(0.0, 0.0))

    def test_direction_is_normalized(self):
        p = Perturbation(kind="in-plane-boost", magnitude=0.1, direction=(3.0, 4.0))
        assert p.direction == (0.6, 0.8)

    def test_shear_requires_profile(self):
        with pytest.raises(ValueError):
            Perturbation(kind="velocity-shear", magnitude=0.1)

    def test_profile_only_for_shear(self):
        with pytest.raises(ValueError):
            Perturbation(kind="in-plane-boost", magnitude=0.1, shear_profile=_profile())


class TestShearProfile:
    def test_compact_support(self):
        prof = _profile()
        far = np.array([[0.25, 0.0, 0.0], [0.0, 0.3, 0.1], [0.11, -0.02, 0.0]])
        assert np.all(prof.value(far) == 0.0)
        assert np.all(prof.gradient(far) == 0.0)
        assert np.all(prof.hessian(far) == 0.0)

    def test_no_overflow_at_cutoff(self):
        prof = ShearProfile(center=(0.0, 0.0), width=1.0, amplitude=1.0)
        radius = np.sqrt(np.array([0.999999, 1.0 - 1e-13, 1.0, 1.0 + 1e-13]))
        pts = np.column_stack([radius, np.zeros(4), np.zeros(4)])
        for arr in (prof.value(pts), prof.gradient(pts), prof.hessian(pts)):
            assert np.all(np.isfinite(arr))

    def test_gradient_matches_finite_differences(self):
        prof = _profile()
        rng = np.random.default_rng(5)
        pts = prof.width * 0.5 * rng.normal(size=(40, 3))
        pts[:, :2] += prof.center
        grad = prof.gradient(pts)
        h = 1e-7
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            fd = (prof.value(pts + step) - prof.value(pts - step)) / (2 * h)
            assert np.allclose(grad[:, axis], fd, rtol=1e-5, atol=1e-10)

    def test_hessian_matches_finite_differences(self):
        prof = _profile()
        rng = np.random.default_rng(6)
        pts = prof.width * 0.5 * rng.normal(size=(20, 3))
        pts[:, :2] += prof.center
        hess = prof.hessian(pts)
        h = 1e-6
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            fd = (prof.gradient(pts + step) - prof.gradient(pts - step)) / (2 * h)
            assert np.allclose(hess[:, :, axis], fd, rtol=1e-4, atol=1e-8)


class TestJacobians:
    def test_shifts_have_identity_jacobian(self):
        pts = np.random.default_rng(7).normal(size=(50, 3))
        for kind in ("plane-translation", "in-plane-boost"):
            p = Perturbation(kind=kind, magnitude=0.3)
            jac = map_jacobians(p, pts)
            assert np.array_equal(jac, np.tile(np.eye(6), (50, 1, 1)))

    def test_shear_determinant_is_unity(self):
        p = Perturbation(
            kind="velocity-shear",
            magnitude=0.3,
            shear_profile=ShearProfile(center=(0.01, -0.03), width=0.09, amplitude=0.2),
        )
        rng = np.random.default_rng(8)
        pts3 = 0.05 * rng.normal(size=(10_000, 3))
        dets = np.linalg.det(map_jacobians(p, pts3))
        assert np.max(np.abs(dets - 1.0)) <= 1e-10
        pts2 = 0.05 * rng.normal(size=(10_000, 2))
        dets = np.linalg.det(map_jacobians(p, pts2))
        assert np.max(np.abs(dets - 1.0)) <= 1e-10

    def test_shear_jacobian_block_is_scaled_hessian(self):
        prof = _profile()
        p = Perturbation(kind="velocity-shear", magnitude=0.4, shear_profile=prof)
        pts = 0.03 * np.random.default_rng(9).normal(size=(10, 3))
        jac = map_jacobians(p, pts)
        assert np.allclose(jac[:, 3:, :3], 0.4 * prof.hessian(pts), rtol=0, atol=0)


class TestTransport:
    def test_translation_moves_positions_only(self):
        p = Perturbation(kind="plane-translation", magnitude=0.2, direction=(0.0, 1.0))
        x = np.zeros((3, 3))
        v = np.ones((3, 3))
        x2, v2 = transport(p, x, v)
        assert np.allclose(x2, [[0.0, 0.2, 0.0]] * 3)
        assert np.array_equal(v2, v)

    def test_boost_moves_velocities_only(self):
        p = Perturbation(kind="in-plane-boost", magnitude=0.2, direction=(1.0, 0.0))
        x = np.ones((3, 2))
        v = np.zeros((3, 2))
        x2, v2 = transport(p, x, v)
        assert np.array_equal(x2, x)
        assert np.allclose(v2, [[0.2, 0.0]] * 3)

    def test_shear_adds_profile_gradient(self):
        prof = _profile()
        p = Perturbation(kind="velocity-shear", magnitude=0.5, shear_profile=prof)
        x = 0.02 * np.random.default_rng(10).normal(size=(6, 3))
        v = np.zeros((6, 3))
        x2, v2 = transport(p, x, v)
        assert np.array_equal(x2, x)
        assert np.allclose(v2, 0.5 * prof.gradient(x), rtol=0, atol=0)


class TestSampling:
    def test_weights_normalize_to_masses(self, coupled_state):
        p = Perturbation(kind="in-plane-boost", magnitude=0.01, seed=1)
        ps = perturb(coupled_state, p, n_samples=20_000)
        np.testing.assert_allclose(
            ps.halo.weights.sum(), coupled_state.constraints.mass_halo, rtol=1e-12
        )
        np.testing.assert_allclose(
            ps.disk.weights.sum(), coupled_state.constraints.mass_disk, rtol=1e-12
        )
        assert np.all(ps.halo.weights >= 0.0)
        assert np.all(ps.disk.weights >= 0.0)

    def test_antithetic_quadruples(self, coupled_state):
        p = Perturbation(kind="in-plane-boost", magnitude=0.01, seed=2)
        ps = perturb(coupled_state, p, n_samples=4_000)
        x = ps.halo.positions
        v = ps.halo.velocities
        w = ps.halo.weights
        flip = np.array([-1.0, -1.0, 1.0])
        assert np.array_equal(x[1::4], x[0::4])
        assert np.array_equal(v[1::4], -v[0::4])
        assert np.array_equal(x[2::4], x[0::4] * flip)
        assert np.array_equal(v[3::4], -v[2::4])
        assert np.array_equal(w.reshape(-1, 4), np.repeat(w[0::4], 4).reshape(-1, 4))

    def test_odd_moments_cancel_exactly(self, coupled_state):
        p = Perturbation(kind="in-plane-boost", magnitude=0.01, seed=3)
        ps = perturb(coupled_state, p, n_samples=40_000)
        for sp in (ps.halo, ps.disk):
            momentum = np.einsum("i,ij->j", sp.weights, sp.velocities)
            centroid = np.einsum("i,ij->j", sp.weights, sp.positions[:, :2])
            assert np.max(np.abs(momentum)) < 1e-13
            assert np.max(np.abs(centroid)) < 1e-13

    def test_samples_respect_cutoff_energy(self, coupled_state):
        p = Perturbation(kind="in-plane-boost", magnitude=0.01, seed=4)
        ps = perturb(coupled_state, p, n_samples=40_000)
        mult = coupled_state.multipliers
        kin = 0.5 * np.einsum("ij,ij->i", ps.halo.velocities, ps.halo.velocities)
        assert np.all(kin + ps.halo.pot_before <= mult.e0_halo + 1e-9)
        kin = 0.5 * np.einsum("ij,ij->i", ps.disk.velocities, ps.disk.velocities)
        assert np.all(kin + ps.disk.pot_before <= mult.e0_disk + 1e-9)

    def test_sample_energies_match_grid_quadratures(self, coupled_state):
        p = Perturbation(kind="in-plane-boost", magnitude=0.01, seed=5)
        ps = perturb(coupled_state, p, n_samples=400_000)
        report = energy_report(coupled_state)
        kin_halo = float(
            np.sum(ps.halo.weights * 0.5 * np.einsum("ij,ij->i", ps.halo.velocities, ps.halo.velocities))
        )
        kin_disk = float(
            np.sum(ps.disk.weights * 0.5 * np.einsum("ij,ij->i", ps.disk.velocities, ps.disk.velocities))
        )
        np.testing.assert_allclose(kin_halo, report.ekin_halo, rtol=0.02)
        np.testing.assert_allclose(kin_disk, report.ekin_disk, rtol=0.02)

    def test_untouched_species_not_sampled(self, coupled_state):
        p = Perturbation(kind="in-plane-boost", magnitude=0.01, component="halo", seed=6)
        ps = perturb(coupled_state, p, n_samples=20_000)
        assert ps.disk is None
        assert ps.halo is not None

    def test_too_few_samples_rejected(self, coupled_state):
        p = Perturbation(kind="in-plane-boost", magnitude=0.01, seed=7)
        with pytest.raises(ValueError):
            perturb(coupled_state, p, n_samples=32)
        with pytest.raises(ValueError):
            perturb(coupled_state, p, n_samples=1_000, n_batches=500)

    def test_sampling_is_deterministic(self, coupled_state):
        p = Perturbation(kind="plane-translation", magnitude=0.005, seed=8)
        d1 = distance_d(perturb(coupled_state, p, n_samples=20_000))
        d2 = distance_d(perturb(coupled_state, p, n_samples=20_000))
        assert d1.value == d2.value and d1.sigma == d2.sigma
        p_other = Perturbation(kind="plane-translation", magnitude=0.005, seed=9)
        d3 = distance_d(perturb(coupled_state, p_other, n_samples=20_000))
        assert d3.value != d1.value


class TestDistance:
    def test_zero_magnitude_gives_exact_zero(self, coupled_state):
        p = Perturbation(kind="in-plane-boost", magnitude=0.0, seed=10)
        d = distance_d(perturb(coupled_state, p, n_samples=20_000))
        assert d.value == 0.0
        assert d.sigma == 0.0

    def test_boost_distance_is_exact(self, coupled_state):
        mass_h = coupled_state.constraints.mass_halo
        mass_d = coupled_state.constraints.mass_disk
        p = Perturbation(kind="in-plane-boost", magnitude=0.05, seed=11)
        d = distance_d(perturb(coupled_state, p, n_samples=20_000))
        np.testing.assert_allclose(d.value, 0.5 * 0.05**2 * (mass_h + mass_d), rtol=1e-12)
        p = Perturbation(kind="in-plane-boost", magnitude=0.05, component="halo", seed=12)
        d = distance_d(perturb(coupled_state, p, n_samples=20_000))
        np.testing.assert_allclose(d.value, 0.5 * 0.05**2 * mass_h, rtol=1e-12)

    def test_translation_distance_positive(self, coupled_state):
        margin = min(
            coupled_state.grid.r_max - coupled_state.support_radius_halo(),
            coupled_state.disk_grid.rmax - coupled_state.support_radius_disk(),
        )
        p = Perturbation(kind="plane-translation", magnitude=0.3 * margin, seed=13)
        d = distance_d(perturb(coupled_state, p, n_samples=100_000))
        assert d.value > 3.0 * d.sigma > 0.0

    def test_shear_distance_positive(self, coupled_state):
        radius = coupled_state.support_radius_halo()
        prof = ShearProfile(center=(0.1 * radius, 0.0), width=radius, amplitude=radius)
        p = Perturbation(kind="velocity-shear", magnitude=0.05, shear_profile=prof, seed=14)
        d = distance_d(perturb(coupled_state, p, n_samples=100_000))
        assert d.value > 3.0 * d.sigma > 0.0

    def test_sigma_scales_as_inverse_root_samples(self, coupled_state):
        p = Perturbation(kind="plane-translation", magnitude=0.01, seed=15)
        sizes = [2_000, 20_000, 200_000]
        sigmas = [
            distance_d(perturb(coupled_state, p, n_samples=n)).sigma for n in sizes
        ]
        slope = np.polyfit(np.log10(sizes), np.log10(sigmas), 1)[0]
        assert -0.65 < slope < -0.35

    def test_escape_raises(self, coupled_state):
        p = Perturbation(kind="plane-translation", magnitude=0.5, seed=16)
        with pytest.raises(SupportEscapeError):
            perturb(coupled_state, p, n_samples=4_000)


class TestExpansion:
    def test_joint_translation_energy_invariance(self, coupled_state):
        margin = min(
            coupled_state.grid.r_max - coupled_state.support_radius_halo(),
            coupled_state.disk_grid.rmax - coupled_state.support_radius_disk(),
        )
        p = Perturbation(
            kind="plane-translation",
            magnitude=0.3 * margin,
            direction=(0.6, -0.8),
            seed=18,
        )
        ex = expansion_check(perturb(coupled_state, p, n_samples=200_000))
        assert ex.h_change_direct == 0.0
        assert ex.quad_halo > 0.0 and ex.quad_disk > 0.0 and ex.quad_cross > 0.0
        assert abs(ex.residual) <= 3.0 * ex.sigma
        quad_total = ex.quad_halo + ex.quad_disk + 2.0 * ex.quad_cross
        assert abs(ex.d_value - quad_total) <= 3.0 * ex.d_sigma

    def test_one_sided_translation_matches_mixed_energy_change(self, coupled_state):
        margin = coupled_state.disk_grid.rmax - coupled_state.support_radius_disk()
        for component in ("halo", "disk"):
            p = Perturbation(
                kind="plane-translation",
                magnitude=0.3 * margin,
                component=component,
                seed=18,
            )
            ex = expansion_check(perturb(coupled_state, p, n_samples=200_000))
            assert ex.h_change_direct > 0.0
            assert abs(ex.residual) <= 3.0 * ex.sigma

    def test_velocity_maps_have_zero_quadratic_terms(self, coupled_state):
        prof = _profile()
        p = Perturbation(kind="velocity-shear", magnitude=0.05, shear_profile=prof, seed=19)
        ps = perturb(coupled_state, p, n_samples=100_000)
        assert np.array_equal(ps.halo.new_positions, ps.halo.positions)
        assert np.array_equal(ps.halo.pot_after, ps.halo.pot_before)
        ex = expansion_check(ps)
        assert ex.quad_halo == 0.0 and ex.quad_disk == 0.0 and ex.quad_cross == 0.0

    def test_boost_expansion_is_exact(self, coupled_state):
        p = Perturbation(kind="in-plane-boost", magnitude=0.04, seed=20)
        ex = expansion_check(perturb(coupled_state, p, n_samples=20_000))
        total = coupled_state.constraints.mass_halo + coupled_state.constraints.mass_disk
        np.testing.assert_allclose(ex.h_change_direct, 0.5 * 0.04**2 * total, rtol=1e-14)
        assert abs(ex.residual) <= 1e-12 * ex.h_change_direct

    def test_shear_expansion_matches_grid_quadrature(self, coupled_state):
        radius = coupled_state.support_radius_halo()
        prof = ShearProfile(center=(0.05 * radius, -0.1 * radius), width=0.8 * radius, amplitude=radius)
        for component in ("both", "disk"):
            p = Perturbation(
                kind="velocity-shear",
                magnitude=0.08,
                component=component,
                shear_profile=prof,
                seed=21,
            )
            ex = expansion_check(perturb(coupled_state, p, n_samples=200_000))
            assert ex.h_change_direct > 0.0
            assert abs(ex.residual) <= 3.0 * ex.sigma


class TestBattery:
    def test_battery_distances_nonnegative_and_detectable(self, coupled_state):
        rows = battery(coupled_state, count=50, n_samples=100_000, seed=1889)
        assert len(rows) == 50
        assert all(row["nonnegative"] for row in rows)
        assert all(row["detectably_positive"] for row in rows)
        kinds = {row["kind"] for row in rows}
        assert kinds == {"plane-translation", "in-plane-boost", "velocity-shear"}

    def test_battery_boost_predictions_hold(self, coupled_state):
        rows = battery(coupled_state, count=30, n_samples=50_000, seed=907)
        boosts = [row for row in rows if row["kind"] == "in-plane-boost"]
        assert boosts
        assert all(row["prediction_ok"] for row in boosts)
