"""Joint steady states of a polytropic halo and an embedded flat disk.

Both species move in the combined potential U + Ut.  Each follows its
own polytropic ansatz with its own cutoff energy and amplitude scale,
and the four Lagrange parameters are pinned by four constraints: the
masses and Casimir norms of the two species.

The solver is a damped two-field Picard iteration.  Every sweep
recomputes the combined potential from the current densities, bisects
the two cutoff energies so the mass constraints hold exactly at the
current amplitude scales, forms candidate densities, then nudges the
amplitude scales toward the Casimir targets.  Saturating both mass
constraints (rather than treating them as inequalities) is a modeling
choice recorded in the returned metadata.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ConvergenceError
from .polytropes import (
    ConstraintVector,
    Exponents,
    Multipliers,
    moment_coefficients,
    solve_decoupled_3d,
    solve_decoupled_flat,
)
from .potentials import (
    DiskDensity,
    HaloDensity,
    PotentialField,
    disk_meridional_potential,
    disk_potential,
    halo_plane_potential,
    halo_potential,
)
from .quadrature import integrate, meridional_grid, radial_grid


@dataclass(frozen=True)
class SolverConfig:
    """Discretization and iteration controls for the coupled solver."""

    n_r: int = 128
    n_z: int = 128
    n_disk: int = 384
    grading: float = 2.0
    damping: float = 0.5
    tol: float = 1e-8
    max_sweeps: int = 400
    bisect_iters: int = 80
    extent_factor: float = 1.3
    regrid_factor: float = 1.4
    max_regrids: int = 6


@dataclass
class CoupledSteadyState:
    """Converged joint state: densities, potentials, and multipliers."""

    exponents: Exponents
    constraints: ConstraintVector
    multipliers: Multipliers
    grid: object
    disk_grid: object
    rho: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    u_halo_mer: np.ndarray = field(repr=False)
    u_disk_mer: np.ndarray = field(repr=False)
    u_halo_plane: np.ndarray = field(repr=False)
    u_disk_plane: np.ndarray = field(repr=False)
    config: SolverConfig = None
    sweeps: int = 0
    converged: bool = True
    metadata: dict = field(default_factory=dict)

    def halo_density(self):
        return HaloDensity(self.grid, self.rho)

    def disk_density(self):
        return DiskDensity(self.disk_grid, self.sigma)

    @property
    def u_mer(self):
        return self.u_halo_mer + self.u_disk_mer

    @property
    def u_plane(self):
        return self.u_halo_plane + self.u_disk_plane

    def gap_halo(self):
        return np.maximum(self.multipliers.e0_halo - self.u_mer, 0.0)

    def gap_disk(self):
        return np.maximum(self.multipliers.e0_disk - self.u_plane, 0.0)

    def mass_halo(self):
        return integrate(self.rho, self.grid)

    def mass_disk(self):
        return integrate(self.sigma, self.disk_grid)

    def potential_field(self):
        """Interpolable combined potential for off-grid evaluation."""
        return PotentialField(
            grid=self.grid,
            disk_grid=self.disk_grid,
            meridional=self.u_mer,
            plane=self.u_plane,
            total_mass=self.mass_halo() + self.mass_disk(),
        )

    def support_radius_halo(self):
        mask = self.rho > 0.0
        if not np.any(mask):
            return 0.0
        rr = np.hypot(self.grid.r_nodes[:, None], self.grid.z_nodes[None, :])
        return float(np.max(rr[mask]))

    def support_radius_disk(self):
        mask = self.sigma > 0.0
        if not np.any(mask):
            return 0.0
        return float(np.max(self.disk_grid.nodes[mask]))


def _cutoff_for_mass(u, lam, k, mass, weights, kind, bisect_iters):
    """Cutoff energy e0 with int c_d lam^-k (e0 - u)_+^p = mass.

    Returns None when even e0 = 0 cannot carry the mass at this
    amplitude scale.  Fixed iteration count for determinism.
    """
    c_d = moment_coefficients(k, kind)[0]
    exponent = k + 1.5 if kind == "halo" else k + 1.0

    def mass_at(e0):
        gap = np.maximum(e0 - u, 0.0)
        return float(np.sum(c_d * lam ** -k * gap ** exponent * weights))

    lo = float(np.min(u))
    if mass_at(0.0) < mass:
        return None
    hi = 0.0
    for _ in range(bisect_iters):
        mid = 0.5 * (lo + hi)
        if mass_at(mid) < mass:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _package_single_halo(exponents, constraints, cfg, note):
    st = solve_decoupled_3d(exponents.k, constraints.mass_halo, constraints.norm_halo)
    grid = meridional_grid(
        cfg.extent_factor * st.radius,
        cfg.extent_factor * st.radius,
        n_r=cfg.n_r,
        n_z=cfg.n_z,
        grading=cfg.grading,
    )
    disk_grid = radial_grid(st.radius, n=cfg.n_disk, measure="disk")
    rho = st.halo_density_on(grid).values
    rho *= constraints.mass_halo / max(integrate(rho, grid), 1e-300)
    zeros_d = np.zeros(cfg.n_disk)
    return CoupledSteadyState(
        exponents=exponents,
        constraints=constraints,
        multipliers=Multipliers(st.e0, st.lam, 0.0, 0.0),
        grid=grid,
        disk_grid=disk_grid,
        rho=rho,
        sigma=zeros_d,
        u_halo_mer=halo_potential(rho, grid),
        u_disk_mer=np.zeros(grid.shape),
        u_halo_plane=halo_plane_potential(rho, grid, disk_grid),
        u_disk_plane=zeros_d,
        config=cfg,
        metadata={"branch": note},
    )


def _package_single_disk(exponents, constraints, cfg, note):
    st = solve_decoupled_flat(
        exponents.kt, constraints.mass_disk, constraints.norm_disk
    )
    grid = meridional_grid(
        cfg.extent_factor * st.radius,
        cfg.extent_factor * st.radius,
        n_r=cfg.n_r,
        n_z=cfg.n_z,
        grading=cfg.grading,
    )
    disk_grid = radial_grid(
        cfg.extent_factor * st.radius, n=cfg.n_disk, measure="disk"
    )
    sigma = st.density_at(disk_grid.nodes)
    sigma *= constraints.mass_disk / max(integrate(sigma, disk_grid), 1e-300)
    return CoupledSteadyState(
        exponents=exponents,
        constraints=constraints,
        multipliers=Multipliers(0.0, 0.0, st.e0, st.lam),
        grid=grid,
        disk_grid=disk_grid,
        rho=np.zeros(grid.shape),
        sigma=sigma,
        u_halo_mer=np.zeros(grid.shape),
        u_disk_mer=disk_meridional_potential(sigma, disk_grid, grid),
        u_halo_plane=np.zeros(cfg.n_disk),
        u_disk_plane=disk_potential(sigma, disk_grid),
        config=cfg,
        metadata={"branch": note},
    )


def _package_empty(exponents, constraints, cfg):
    grid = meridional_grid(1.0, 1.0, n_r=8, n_z=8)
    disk_grid = radial_grid(1.0, n=8, measure="disk")
    return CoupledSteadyState(
        exponents=exponents,
        constraints=constraints,
        multipliers=Multipliers(0.0, 0.0, 0.0, 0.0),
        grid=grid,
        disk_grid=disk_grid,
        rho=np.zeros(grid.shape),
        sigma=np.zeros(8),
        u_halo_mer=np.zeros(grid.shape),
        u_disk_mer=np.zeros(grid.shape),
        u_halo_plane=np.zeros(8),
        u_disk_plane=np.zeros(8),
        config=cfg,
        metadata={"branch": "empty"},
    )


def solve_coupled(exponents, constraints, config=None):
    """Steady state with both species in their combined potential.

    Initialized from the two decoupled solutions placed concentrically.
    Grids follow the supports: if a candidate support reaches a grid
    boundary the solve restarts on an enlarged grid, so no prior size
    estimate is needed.  A species with zero constraints is simply
    absent and the problem degenerates to the decoupled one.
    """
    cfg = config or SolverConfig()
    k, kt = exponents.k, exponents.kt
    mh, nh = constraints.mass_halo, constraints.norm_halo
    md, nd = constraints.mass_disk, constraints.norm_disk
    if mh == 0.0 and md == 0.0:
        return _package_empty(exponents, constraints, cfg)
    if md == 0.0:
        return _package_single_halo(exponents, constraints, cfg, "halo only")
    if mh == 0.0:
        return _package_single_disk(exponents, constraints, cfg, "disk only")

    halo0 = solve_decoupled_3d(k, mh, nh)
    disk0 = solve_decoupled_flat(kt, md, nd)
    lam, lamt = halo0.lam, disk0.lam
    q_halo_target = nh ** ((k + 1.0) / k)
    q_disk_target = nd ** ((kt + 1.0) / kt)
    c_dh, c_kh, c_ch = moment_coefficients(k, "halo")
    c_dd, c_kd, c_cd = moment_coefficients(kt, "disk")

    extent_mer = cfg.extent_factor * halo0.radius
    extent_disk = cfg.extent_factor * disk0.radius
    rho = sigma = None
    prev = None
    total_sweeps = 0
    regrids = 0

    for attempt in range(cfg.max_regrids + 1):
        grid = meridional_grid(
            extent_mer, extent_mer, n_r=cfg.n_r, n_z=cfg.n_z, grading=cfg.grading
        )
        disk_grid = radial_grid(
            extent_disk, n=cfg.n_disk, measure="disk", grading=cfg.grading
        )
        if prev is None:
            rho = halo0.halo_density_on(grid).values
            sigma = disk0.density_at(disk_grid.nodes)
        else:
            interp = RegularGridInterpolator(
                (prev["grid"].r_nodes, prev["grid"].z_nodes),
                prev["rho"],
                bounds_error=False,
                fill_value=0.0,
            )
            rr, zz = np.meshgrid(grid.r_nodes, grid.z_nodes, indexing="ij")
            rho = interp(np.stack([rr, zz], axis=-1))
            sigma = np.interp(
                disk_grid.nodes, prev["disk_grid"].nodes, prev["sigma"], right=0.0
            )
        rho *= mh / max(integrate(rho, grid), 1e-300)
        sigma *= md / max(integrate(sigma, disk_grid), 1e-300)
        w_mer = grid.weights
        w_disk = disk_grid.weights

        escaped = False
        converged = False
        for sweep in range(cfg.max_sweeps):
            total_sweeps += 1
            u_mer = halo_potential(rho, grid) + disk_meridional_potential(
                sigma, disk_grid, grid
            )
            u_plane = halo_plane_potential(rho, grid, disk_grid) + disk_potential(
                sigma, disk_grid
            )
            # cutoffs first: masses pinned at the current amplitude scales
            e0 = _cutoff_for_mass(
                u_mer, lam, k, mh, w_mer, "halo", cfg.bisect_iters
            )
            while e0 is None:
                lam *= 0.5
                e0 = _cutoff_for_mass(
                    u_mer, lam, k, mh, w_mer, "halo", cfg.bisect_iters
                )
            e0t = _cutoff_for_mass(
                u_plane, lamt, kt, md, w_disk, "disk", cfg.bisect_iters
            )
            while e0t is None:
                lamt *= 0.5
                e0t = _cutoff_for_mass(
                    u_plane, lamt, kt, md, w_disk, "disk", cfg.bisect_iters
                )
            gap_h = np.maximum(e0 - u_mer, 0.0)
            gap_d = np.maximum(e0t - u_plane, 0.0)
            # boundary escape: jump toward the monopole estimate of the
            # edge radius (total mass over cutoff depth), growing by at
            # least the regrid factor
            if np.any(gap_h[-1, :] > 0.0) or np.any(gap_h[:, -1] > 0.0):
                r_est = min((mh + md) / max(-e0, 1e-300), 1e3 * extent_mer)
                extent_mer = max(
                    cfg.extent_factor * r_est, cfg.regrid_factor * extent_mer
                )
                escaped = True
            if gap_d[-1] > 0.0:
                r_est = min((mh + md) / max(-e0t, 1e-300), 1e3 * extent_disk)
                extent_disk = max(
                    cfg.extent_factor * r_est, cfg.regrid_factor * extent_disk
                )
                escaped = True
            if escaped:
                break
            rho_cand = c_dh * lam ** -k * gap_h ** (k + 1.5)
            sigma_cand = c_dd * lamt ** -kt * gap_d ** (kt + 1.0)
            # amplitude scales nudged toward the Casimir targets
            q_h = float(np.sum(c_ch * lam ** -(k + 1.0) * gap_h ** (k + 2.5) * w_mer))
            q_d = float(
                np.sum(c_cd * lamt ** -(kt + 1.0) * gap_d ** (kt + 2.0) * w_disk)
            )
            lam_next = lam * (q_h / q_halo_target) ** (1.0 / (k + 1.0))
            lamt_next = lamt * (q_d / q_disk_target) ** (1.0 / (kt + 1.0))
            step = max(
                np.max(np.abs(rho_cand - rho)) / max(np.max(rho_cand), 1e-300),
                np.max(np.abs(sigma_cand - sigma)) / max(np.max(sigma_cand), 1e-300),
            )
            scale_step = max(
                abs(lam_next / lam - 1.0), abs(lamt_next / lamt - 1.0)
            )
            rho = (1.0 - cfg.damping) * rho + cfg.damping * rho_cand
            sigma = (1.0 - cfg.damping) * sigma + cfg.damping * sigma_cand
            lam, lamt = lam_next, lamt_next
            if step < cfg.tol and scale_step < cfg.tol:
                converged = True
                break
        if converged:
            # oversize grids waste resolution: when a support sits deep
            # inside its grid, re-solve on one matched to it
            shrink = False
            mask = gap_h > 0.0
            if np.any(mask):
                rr = np.hypot(grid.r_nodes[:, None], grid.z_nodes[None, :])
                r_h = float(np.max(rr[mask]))
                if r_h < 0.5 * grid.r_max:
                    extent_mer = cfg.extent_factor * r_h
                    shrink = True
            pos = gap_d > 0.0
            if np.any(pos) and not pos[-1]:
                edge = int(np.nonzero(pos)[0][-1])
                g0, g1 = gap_d[edge], gap_d[edge + 1]
                r_d = disk_grid.nodes[edge] + (
                    disk_grid.nodes[edge + 1] - disk_grid.nodes[edge]
                ) * (g0 / (g0 - g1))
                if r_d < 0.5 * disk_grid.rmax:
                    extent_disk = cfg.extent_factor * r_d
                    shrink = True
            if not shrink:
                break
            regrids += 1
            prev = {"grid": grid, "disk_grid": disk_grid, "rho": rho, "sigma": sigma}
            continue
        if escaped:
            regrids += 1
            prev = {"grid": grid, "disk_grid": disk_grid, "rho": rho, "sigma": sigma}
            continue
        raise ConvergenceError(
            "coupled solver did not converge",
            diagnostics={
                "sweeps": total_sweeps,
                "step": step,
                "scale_step": scale_step,
            },
        )
    else:
        raise ConvergenceError(
            "coupled solver grid adaptation did not settle",
            diagnostics={
                "extent_mer": extent_mer,
                "extent_disk": extent_disk,
                "regrids": regrids,
            },
        )

    # final consistent pass: potentials of the converged densities and
    # mass-exact cutoffs against them
    u_halo_mer = halo_potential(rho, grid)
    u_disk_mer = disk_meridional_potential(sigma, disk_grid, grid)
    u_halo_plane = halo_plane_potential(rho, grid, disk_grid)
    u_disk_plane = disk_potential(sigma, disk_grid)
    e0 = _cutoff_for_mass(
        u_halo_mer + u_disk_mer, lam, k, mh, w_mer, "halo", cfg.bisect_iters
    )
    e0t = _cutoff_for_mass(
        u_halo_plane + u_disk_plane, lamt, kt, md, w_disk, "disk", cfg.bisect_iters
    )
    gap_h = np.maximum(e0 - (u_halo_mer + u_disk_mer), 0.0)
    gap_d = np.maximum(e0t - (u_halo_plane + u_disk_plane), 0.0)
    rho = c_dh * lam ** -k * gap_h ** (k + 1.5)
    sigma = c_dd * lamt ** -kt * gap_d ** (kt + 1.0)
    return CoupledSteadyState(
        exponents=exponents,
        constraints=constraints,
        multipliers=Multipliers(e0, lam, e0t, lamt),
        grid=grid,
        disk_grid=disk_grid,
        rho=rho,
        sigma=sigma,
        u_halo_mer=u_halo_mer,
        u_disk_mer=u_disk_mer,
        u_halo_plane=u_halo_plane,
        u_disk_plane=u_disk_plane,
        config=cfg,
        sweeps=total_sweeps,
        converged=True,
        metadata={
            "branch": "coupled",
            "regrids": regrids,
            "constraint_handling": "both mass constraints saturated (modeling choice)",
        },
    )


def euler_lagrange_residual(state):
    """Sup-norm defect of the ansatz against the state's own potential.

    Both densities are recomputed from the stored multipliers and the
    combined potential of the stored densities; the residual is the
    relative sup distance to the stored fields.
    """
    k, kt = state.exponents.k, state.exponents.kt
    c_dh = moment_coefficients(k, "halo")[0]
    c_dd = moment_coefficients(kt, "disk")[0]
    m = state.multipliers
    res_h = 0.0
    res_d = 0.0
    if np.any(state.rho > 0.0):
        u_mer = halo_potential(state.rho, state.grid) + disk_meridional_potential(
            state.sigma, state.disk_grid, state.grid
        )
        model = c_dh * m.lam_halo ** -k * np.maximum(
            m.e0_halo - u_mer, 0.0
        ) ** (k + 1.5)
        res_h = float(np.max(np.abs(model - state.rho)) / np.max(state.rho))
    if np.any(state.sigma > 0.0):
        u_plane = halo_plane_potential(
            state.rho, state.grid, state.disk_grid
        ) + disk_potential(state.sigma, state.disk_grid)
        model = c_dd * m.lam_disk ** -kt * np.maximum(
            m.e0_disk - u_plane, 0.0
        ) ** (kt + 1.0)
        res_d = float(np.max(np.abs(model - state.sigma)) / np.max(state.sigma))
    return max(res_h, res_d)


def support_check(state):
    """Margins between the supports and the grid boundaries.

    Returns a dict of radii and boundary gap values; negative boundary
    gaps mean the cutoff surface closes inside the grid as it should.
    """
    gap_h = state.multipliers.e0_halo - state.u_mer
    gap_d = state.multipliers.e0_disk - state.u_plane
    return {
        "halo_support_radius": state.support_radius_halo(),
        "disk_support_radius": state.support_radius_disk(),
        "halo_grid_extent": state.grid.r_max,
        "disk_grid_extent": state.disk_grid.rmax,
        "halo_boundary_gap": float(
            max(np.max(gap_h[-1, :]), np.max(gap_h[:, -1]))
        ),
        "disk_boundary_gap": float(gap_d[-1]),
        "halo_contained": bool(
            np.all(gap_h[-1, :] <= 0.0) and np.all(gap_h[:, -1] <= 0.0)
        ),
        "disk_contained": bool(gap_d[-1] <= 0.0),
    }


def multiplier_consistency(state, report=None):
    """Relative defects of the variational multiplier formulas.

    The cutoff energies satisfy
        e0  M  = (2k + 5)/3 Ekin  + 2 Epot  + Emix
        e0t Mt = (kt + 2)  Ekint + 2 Epott + Emix
    and the amplitude scales
        lam  = 2 (k + 1) Ekin / (3 Q),   lamt = (kt + 1) Ekint / Qt,
    with Q, Qt the Casimir integrals.  Deviations measure how far the
    discrete state is from exact stationarity.
    """
    from .energetics import energy_report

    if report is None:
        report = energy_report(state)
    k, kt = state.exponents.k, state.exponents.kt
    m = state.multipliers
    out = {}
    mh = state.mass_halo()
    md = state.mass_disk()
    if mh > 0.0:
        e0_pred = (
            (2.0 * k + 5.0) / 3.0 * report.ekin_halo
            + 2.0 * report.epot_halo
            + report.mixed
        ) / mh
        q_h = float(
            np.sum(
                moment_coefficients(k, "halo")[2]
                * m.lam_halo ** -(k + 1.0)
                * state.gap_halo() ** (k + 2.5)
                * state.grid.weights
            )
        )
        lam_pred = 2.0 * (k + 1.0) * report.ekin_halo / (3.0 * q_h)
        out["e0_halo"] = abs(m.e0_halo - e0_pred) / abs(m.e0_halo)
        out["lam_halo"] = abs(m.lam_halo - lam_pred) / m.lam_halo
    if md > 0.0:
        e0t_pred = (
            (kt + 2.0) * report.ekin_disk + 2.0 * report.epot_disk + report.mixed
        ) / md
        q_d = float(
            np.sum(
                moment_coefficients(kt, "disk")[2]
                * m.lam_disk ** -(kt + 1.0)
                * state.gap_disk() ** (kt + 2.0)
                * state.disk_grid.weights
            )
        )
        lamt_pred = (kt + 1.0) * report.ekin_disk / q_d
        out["e0_disk"] = abs(m.e0_disk - e0t_pred) / abs(m.e0_disk)
        out["lam_disk"] = abs(m.lam_disk - lamt_pred) / m.lam_disk
    return out
