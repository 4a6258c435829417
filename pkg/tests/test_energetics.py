"""Energy reports, scaling families, and binding probes."""

import numpy as np
import pytest

from diskhalo.coupled_solver import SolverConfig, solve_coupled
from diskhalo.energetics import (
    casimir_norms,
    density_bound_covariance,
    energy_report,
    lower_bound_witness,
    scaling_probe,
    subadditivity_probe,
)
from diskhalo.polytropes import ConstraintVector, Exponents
from diskhalo.potentials import pot_inner

from .bodies import antialiased_ball
from .conftest import BASE_CONSTRAINTS, BASE_EXPONENTS


def test_report_structure(coupled_state):
    rep = energy_report(coupled_state)
    assert rep.ekin_halo > 0.0
    assert rep.ekin_disk > 0.0
    assert rep.epot_halo < 0.0
    assert rep.epot_disk < 0.0
    assert rep.mixed < 0.0
    assert rep.mixed_alt < 0.0
    total = (
        rep.ekin_halo + rep.ekin_disk + rep.epot_halo + rep.epot_disk + rep.mixed
    )
    assert rep.total == total
    assert rep.total < 0.0


def test_kinetic_energy_two_routes(coupled_state):
    rep = energy_report(coupled_state)
    assert abs(rep.ekin_halo_alt - rep.ekin_halo) / rep.ekin_halo < 1e-6
    assert abs(rep.ekin_disk_alt - rep.ekin_disk) / rep.ekin_disk < 1e-6


def test_mixed_routes_agree_on_resolved_state(coupled_state_fine):
    rep = energy_report(coupled_state_fine)
    assert rep.mixed_discrepancy < 1e-4


def test_mixed_strictly_negative_for_overlap(coupled_state):
    rep = energy_report(coupled_state)
    assert rep.mixed < 0.0
    assert rep.mixed_alt < 0.0


def test_report_of_decoupled_halo(halo_ref):
    rep = energy_report(halo_ref)
    assert rep.ekin_halo == halo_ref.ekin
    assert rep.epot_halo == halo_ref.epot
    assert rep.ekin_disk == 0.0
    assert rep.mixed == 0.0
    assert rep.total < 0.0
    assert abs(rep.ekin_halo_alt - rep.ekin_halo) / rep.ekin_halo < 1e-9


def test_report_of_decoupled_disk(disk_ref):
    rep = energy_report(disk_ref)
    assert rep.ekin_disk == disk_ref.ekin
    assert rep.epot_disk == disk_ref.epot
    assert rep.ekin_halo == 0.0
    assert rep.total < 0.0
    assert abs(rep.ekin_disk_alt - rep.ekin_disk) / rep.ekin_disk < 1e-9


def test_single_species_total_is_plain_sum():
    st = solve_coupled(Exponents(1.0, 0.5), ConstraintVector(1.0, 1.0, 0.0, 0.0))
    rep = energy_report(st)
    assert rep.ekin_disk == 0.0 and rep.epot_disk == 0.0 and rep.mixed == 0.0
    assert rep.total == rep.ekin_halo + rep.epot_halo


def test_empty_state_has_zero_energy():
    st = solve_coupled(Exponents(1.0, 0.5), ConstraintVector(0.0, 0.0, 0.0, 0.0))
    assert energy_report(st).total == 0.0


def test_uniform_ball_self_energy():
    from diskhalo.quadrature import meridional_grid

    grid = meridional_grid(1.3, 1.3, n_r=128, n_z=128)
    ball = antialiased_ball(grid, radius=1.0)
    m = ball.mass()
    epot = -pot_inner(ball, ball)
    assert abs(epot + 0.6 * m ** 2) < 5e-3 * 0.6 * m ** 2


def test_scaling_probe_identity(coupled_state):
    for family in ("casimir-only", "invariant"):
        pr = scaling_probe(coupled_state, 1.0, family)
        assert pr.deviation < 1e-14
        assert abs(pr.h_predicted - pr.base.total) < 1e-14 * abs(pr.base.total)


def test_scaling_probe_casimir_only(coupled_state):
    pr = scaling_probe(coupled_state, 2.0, "casimir-only")
    assert pr.deviation < 1e-10
    # only the halo kinetic term moves
    assert abs(pr.scaled.ekin_halo - 0.25 * pr.base.ekin_halo) < 1e-10
    assert abs(pr.scaled.epot_halo - pr.base.epot_halo) < 1e-10
    assert abs(pr.scaled.mixed - pr.base.mixed) < 1e-10
    k = coupled_state.exponents.k
    want = 2.0 ** (3.0 / (k + 1.0)) * casimir_norms(coupled_state)[0]
    assert abs(pr.norms["norm_halo_recomputed"] - want) < 1e-10 * want
    assert (
        abs(pr.norms["mass_halo_recomputed"] - pr.norms["mass_halo_predicted"])
        < 1e-10
    )


@pytest.mark.parametrize("c", [0.5, 2.0])
def test_scaling_probe_invariant(coupled_state, c):
    pr = scaling_probe(coupled_state, c, "invariant")
    assert pr.deviation < 1e-10
    assert (
        abs(pr.norms["mass_halo_recomputed"] - c ** 2 * 1.0) < 1e-8
    )
    assert (
        abs(pr.norms["mass_disk_recomputed"] - c ** 2 * 0.3) < 1e-8
    )


def test_scaling_probe_rejects_bad_input(coupled_state):
    with pytest.raises(ValueError):
        scaling_probe(coupled_state, -1.0, "invariant")
    with pytest.raises(ValueError):
        scaling_probe(coupled_state, 2.0, "unknown")
    with pytest.raises(TypeError):
        scaling_probe("not a state", 2.0, "invariant")


def test_lower_bound_witness(coupled_state):
    rep = energy_report(coupled_state)
    wit = lower_bound_witness(rep)
    assert np.isfinite(wit["c_state"])
    assert wit["c_state"] > 0.0
    assert wit["satisfied"]
    assert abs(rep.total - wit["lower_bound"]) < 1e-10 * abs(rep.total)


def test_density_bound_covariance(coupled_state):
    lhs, rhs = density_bound_covariance(coupled_state)
    assert abs(lhs + 3.0) < 0.03
    assert abs(rhs + 3.0) < 0.03
    assert abs(lhs - rhs) < 0.03


def test_density_bound_covariance_decoupled(halo_ref):
    lhs, rhs = density_bound_covariance(halo_ref)
    assert abs(lhs + 3.0) < 0.03
    assert abs(rhs + 3.0) < 0.03


def test_subadditivity_trivial_addition(coupled_state):
    probe = subadditivity_probe(
        BASE_EXPONENTS,
        BASE_CONSTRAINTS,
        ConstraintVector(0.0, 0.0, 0.0, 0.0),
    )
    assert probe.h2 == 0.0
    assert probe.margin == probe.h1 - probe.h12
    assert abs(probe.h12 - probe.h1) < 1e-8 * abs(probe.h1)


def test_subadditivity_pure_halo_addition():
    cfg = SolverConfig(n_r=96, n_z=96, n_disk=256)
    probe = subadditivity_probe(
        Exponents(1.0, 0.5),
        ConstraintVector(0.6, 0.6, 0.3, 0.3),
        ConstraintVector(0.4, 0.4, 0.0, 0.0),
        cfg,
    )
    assert probe.h1 < 0.0 and probe.h2 < 0.0 and probe.h12 < 0.0
    assert probe.margin > 0.0
