"""Steady states of a razor-thin galactic disk coupled to a 3D dark halo.

Polytropic equilibria of the two-species gravitational system, their
potentials and energies, scaling and virial identities, and Monte Carlo
probes of the energy expansion around a computed steady state.  All
quantities use gravitational units G = 1.
"""

__version__ = "0.1.0"

from .quadrature import (
    RadialGrid,
    MeridionalGrid,
    radial_grid,
    meridional_grid,
    elliptic_k,
    integrate,
    lp_norm,
)
from .potentials import (
    DiskDensity,
    HaloDensity,
    PotentialField,
    disk_potential,
    effective_potential,
    halo_potential,
    mixed_energy_both_ways,
    pot_inner,
)
from .polytropes import (
    ConstraintVector,
    Exponents,
    Multipliers,
    SteadyState3D,
    SteadyStateFlat,
    moment_coefficients,
    solve_decoupled_3d,
    solve_decoupled_flat,
)
from .coupled_solver import (
    CoupledSteadyState,
    SolverConfig,
    euler_lagrange_residual,
    multiplier_consistency,
    solve_coupled,
    support_check,
)
from .energetics import (
    EnergyReport,
    casimir_norms,
    energy_report,
    lower_bound_witness,
    scaling_probe,
    subadditivity_probe,
)
from .stability import (
    Perturbation,
    ShearProfile,
    battery,
    distance_d,
    expansion_check,
    perturb,
)
from .errors import (
    ConvergenceError,
    DiskHaloError,
    InfeasibleComponentError,
    MultiplierError,
    SupportEscapeError,
    UnboundedStateError,
)

__all__ = [
    "RadialGrid",
    "MeridionalGrid",
    "radial_grid",
    "meridional_grid",
    "elliptic_k",
    "integrate",
    "lp_norm",
    "DiskDensity",
    "HaloDensity",
    "PotentialField",
    "disk_potential",
    "effective_potential",
    "halo_potential",
    "mixed_energy_both_ways",
    "pot_inner",
    "ConstraintVector",
    "Exponents",
    "Multipliers",
    "SteadyState3D",
    "SteadyStateFlat",
    "moment_coefficients",
    "solve_decoupled_3d",
    "solve_decoupled_flat",
    "CoupledSteadyState",
    "SolverConfig",
    "euler_lagrange_residual",
    "multiplier_consistency",
    "solve_coupled",
    "support_check",
    "EnergyReport",
    "casimir_norms",
    "energy_report",
    "lower_bound_witness",
    "scaling_probe",
    "subadditivity_probe",
    "Perturbation",
    "ShearProfile",
    "battery",
    "distance_d",
    "expansion_check",
    "perturb",
    "ConvergenceError",
    "DiskHaloError",
    "InfeasibleComponentError",
    "MultiplierError",
    "SupportEscapeError",
    "UnboundedStateError",
]
