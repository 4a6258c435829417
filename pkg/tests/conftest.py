"""Shared fixtures: converged states reused across test modules.

Session scope keeps the expensive solves to one per run.  The fine
variant of the joint state doubles the vertical resolution; the razor
coupling between the plane and the volume converges at second order in
the z spacing, so checks on the interaction energy use that one.
"""

import pytest

from diskhalo.coupled_solver import SolverConfig, solve_coupled
from diskhalo.polytropes import (
    ConstraintVector,
    Exponents,
    solve_decoupled_3d,
    solve_decoupled_flat,
)

BASE_EXPONENTS = Exponents(1.0, 0.5)
BASE_CONSTRAINTS = ConstraintVector(1.0, 1.0, 0.3, 0.3)


@pytest.fixture(scope="session")
def coupled_state():
    return solve_coupled(BASE_EXPONENTS, BASE_CONSTRAINTS)


@pytest.fixture(scope="session")
def coupled_state_fine():
    return solve_coupled(
        BASE_EXPONENTS, BASE_CONSTRAINTS, SolverConfig(n_z=256, n_disk=512)
    )


@pytest.fixture(scope="session")
def halo_ref():
    return solve_decoupled_3d(1.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def disk_ref():
    return solve_decoupled_flat(0.5, 1.0, 1.0)
