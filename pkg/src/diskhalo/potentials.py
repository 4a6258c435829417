"""Newtonian potentials of axisymmetric bodies and razor-thin disks.

Everything here works on two kinds of sources:

* a 3d axisymmetric density rho(R, z), even in z, sampled on a
  ``MeridionalGrid`` covering the upper half-plane, and
* a planar surface density sigma(r) sampled on a ``RadialGrid`` with the
  disk measure.

Potentials carry the attractive sign convention (negative for positive
densities, G = 1).  The azimuthal angle is integrated out analytically,
which reduces every evaluation to sums of the ring kernel

    kappa(R, z; R', z') = 4 K(m) / D,
    D^2 = (R + R')^2 + (z - z')^2,   m = 4 R R' / D^2,

with K the complete elliptic integral of the first kind.  The kernel has
a logarithmic singularity at coincident rings; matrix entries whose
target falls inside the source cell are replaced by cell averages of the
ring asymptotics, which keeps the quadrature second order and makes
every kernel matrix symmetric and scale covariant.
"""

from dataclasses import dataclass

import numpy as np

from .quadrature import MeridionalGrid, RadialGrid, elliptic_k, integrate

_TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# densities


@dataclass
class HaloDensity:
    """Axisymmetric 3d density on a meridional grid (upper half-plane)."""

    grid: MeridionalGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError("density shape does not match grid")

    def mass(self):
        return integrate(self.values, self.grid)

    def support_radius(self):
        """Largest spherical radius of any cell carrying density."""
        mask = self.values > 0.0
        if not np.any(mask):
            return 0.0
        rr = np.hypot(self.grid.r_nodes[:, None], self.grid.z_nodes[None, :])
        return float(np.max(rr[mask]))


@dataclass
class DiskDensity:
    """Planar surface density on a radial grid with the disk measure."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.nodes.shape:
            raise ValueError("density shape does not match grid")
        if self.grid.measure != "disk":
            raise ValueError("disk densities require the disk measure")

    def mass(self):
        return integrate(self.values, self.grid)

    def support_radius(self):
        mask = self.values > 0.0
        if not np.any(mask):
            return 0.0
        return float(np.max(self.grid.nodes[mask]))


# ---------------------------------------------------------------------------
# ring kernel


def azimuthal_kernel(r, z, r_src, z_src):
    """Azimuthally integrated inverse distance between two rings.

    Returns int_0^{2 pi} dphi / |x - y| for x = (r, 0, z) and y a ring of
    radius r_src at height z_src.  Accepts scalars or broadcastable
    arrays.  Raises for coincident points, where the integral diverges.
    """
    r, z, r_src, z_src = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (r, z, r_src, z_src))
    )
    sep2 = (r - r_src) ** 2 + (z - z_src) ** 2
    if np.any(sep2 == 0.0):
        raise ValueError("azimuthal kernel is singular at coincident points")
    d2 = (r + r_src) ** 2 + (z - z_src) ** 2
    m = 1.0 - sep2 / d2
    out = 4.0 * elliptic_k(np.minimum(m, 1.0 - 1e-16)) / np.sqrt(d2)
    return float(out) if out.ndim == 0 else out


def _ring_kernel_raw(r_t, z_t, r_s, z_s):
    """Kernel on broadcast arrays with singular entries left as junk.

    Coincident or nearly coincident entries evaluate to a large finite
    number instead of raising; callers overwrite them with cell rules.
    """
    sep2 = (r_t - r_s) ** 2 + (z_t - z_s) ** 2
    d2 = (r_t + r_s) ** 2 + (z_t - z_s) ** 2
    safe = np.where(d2 > 0.0, d2, 1.0)
    m = np.clip(1.0 - sep2 / safe, 0.0, 1.0 - 1e-16)
    out = 4.0 * elliptic_k(m) / np.sqrt(safe)
    return np.where(d2 > 0.0, out, 0.0)


def _axis_cell_kernel(a, b, reduced_mass):
    """Effective kernel for a target at the center of an axis cell.

    The cell is the uniform cylinder of radius a and half-height b whose
    exact self-potential integral is known in closed form.  reduced_mass
    is the phi-reduced quadrature mass the entry multiplies.
    """
    integral = _TWO_PI * (
        b * np.hypot(a, b) + a * a * np.arcsinh(b / a) - b * b
    )
    return integral / reduced_mass


def _log_cell_average(t, h):
    """Average of ln|t - s| over s in [-h/2, h/2] (offset |t| <= h/2)."""
    u1 = np.abs(0.5 * h - t)
    u2 = np.abs(0.5 * h + t)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(u1 > 0.0, u1 * np.log(u1), 0.0) + np.where(
            u2 > 0.0, u2 * np.log(u2), 0.0
        )
    return s / h - 1.0


# ---------------------------------------------------------------------------
# kernel matrices (cached on the grid objects they belong to)


def _halo_kernel_tensor(grid):
    """Ring kernel stack G[d, i, p] = kappa(R_i, R_p, d * dz).

    Uniform z spacing means the kernel depends on z only through the
    separation index d = |j - q| (direct term) or d = j + q (mirror
    term), so one stack of radial matrices serves the whole grid.
    """
    cached = getattr(grid, "_halo_kernel_tensor", None)
    if cached is not None:
        return cached
    R = grid.r_nodes
    nr, nz = grid.shape
    dz = grid.dz
    Ri = R[:, None]
    Rp = R[None, :]
    G = np.empty((2 * nz - 1, nr, nr))
    for d in range(2 * nz - 1):
        G[d] = _ring_kernel_raw(Ri, 0.0, Rp, d * dz)
    # self cells: target node inside its own source cell at d = 0
    rw = grid.r_weights
    a0 = np.sqrt(rw[0] / np.pi)
    G[0, 0, 0] = _axis_cell_kernel(a0, 0.5 * dz, (rw[0] / _TWO_PI) * dz)
    dr_eff = rw[1:] / (_TWO_PI * R[1:])
    a_cell = np.sqrt(dr_eff * dz / np.pi)
    idx = np.arange(1, nr)
    G[0, idx, idx] = (2.0 / R[1:]) * (np.log(8.0 * R[1:] / a_cell) + 0.5)
    grid._halo_kernel_tensor = G
    return G


def plane_kernel_matrix(r_targets, disk_grid):
    """Kernel matrix K[t, p] = kappa(r_t, 0; r_p, 0) for planar sources.

    Targets that fall inside a source cell use the cell average of the
    ring asymptotics; targets inside the axis cell use the flat axis
    rule.  Entries multiply the phi-reduced weights w_p / (2 pi).
    """
    r_t = np.asarray(r_targets, dtype=float)
    r_p = disk_grid.nodes
    K = _ring_kernel_raw(r_t[:, None], 0.0, r_p[None, :], 0.0)
    widths = np.diff(disk_grid.cell_edges())
    t_off = r_t[:, None] - r_p[None, :]
    inside = np.abs(t_off) < 0.5 * widths[None, :]
    inside[:, 0] = False
    if np.any(inside):
        rbar = np.where(inside, 0.5 * (r_t[:, None] + r_p[None, :]), 1.0)
        avg = _log_cell_average(t_off, widths[None, :])
        K = np.where(inside, (2.0 / rbar) * (np.log(8.0 * rbar) - avg), K)
    # axis cell: uniform disk of radius a matching the node weight
    a0 = np.sqrt(disk_grid.weights[0] / np.pi)
    K[:, 0] = np.where(r_t < a0, 4.0 * np.pi / a0, K[:, 0])
    return K


def _merid_plane_kernel(r_targets, grid):
    """Kernel row K[t, p] = kappa(r_t, 0; R_p, 0) for the z = 0 source
    layer of a meridional grid, with in-cell targets averaged over the
    rectangular cell of width dr_eff and height dz."""
    r_t = np.asarray(r_targets, dtype=float)
    R = grid.r_nodes
    dz = grid.dz
    K = _ring_kernel_raw(r_t[:, None], 0.0, R[None, :], 0.0)
    rw = grid.r_weights
    dr_eff = np.empty_like(R)
    dr_eff[0] = np.inf
    dr_eff[1:] = rw[1:] / (_TWO_PI * R[1:])
    inside = np.abs(r_t[:, None] - R[None, :]) < 0.5 * dr_eff[None, :]
    inside[:, 0] = False
    if np.any(inside):
        rbar = np.where(inside, 0.5 * (r_t[:, None] + R[None, :]), 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            a_cell = np.sqrt(dr_eff * dz / np.pi)[None, :]
            K = np.where(
                inside, (2.0 / rbar) * (np.log(8.0 * rbar / a_cell) + 0.5), K
            )
    a0 = np.sqrt(rw[0] / np.pi)
    k_axis = _axis_cell_kernel(a0, 0.5 * dz, (rw[0] / _TWO_PI) * dz)
    K[:, 0] = np.where(r_t < a0, k_axis, K[:, 0])
    return K


def _source_average_matrix(src_grid, n_sub=8):
    """Map nodal kernel values on a refined grid to cell-averaged ones.

    Returns (fine_nodes, M) with M of shape (n_fine, n_src):
    K_avg = K_fine @ M replaces point evaluation at the source nodes by
    the hat-weighted average over each node's cells, which matters when
    the kernel varies across a cell.
    """
    r = src_grid.nodes
    base = np.linspace(0.0, 1.0, n_sub, endpoint=False)
    fine = (r[:-1, None] + np.diff(r)[:, None] * base[None, :]).ravel()
    fine = np.concatenate([fine, r[-1:]])
    from .quadrature import RadialGrid

    w_fine = RadialGrid(nodes=fine, measure=src_grid.measure).weights
    # hat functions of the source nodes sampled on the fine nodes
    idx = np.clip(np.searchsorted(r, fine, side="right") - 1, 0, r.size - 2)
    t = (fine - r[idx]) / (r[idx + 1] - r[idx])
    P = np.zeros((fine.size, r.size))
    rows = np.arange(fine.size)
    P[rows, idx] = 1.0 - t
    P[rows, idx + 1] = t
    M = P * w_fine[:, None] / src_grid.weights[None, :]
    return fine, M


def _disk_to_merid_tensor(grid, disk_grid):
    """K[i, j, p] = kappa(R_i, z_j; r_p, 0), cached per grid pair.

    Rows whose height is comparable to the disk cell widths use
    cell-averaged kernels: the point kernel varies on the scale z_j
    there and node sampling would bias the potential.
    """
    cache = getattr(grid, "_disk_to_merid", None)
    if cache is not None and cache[0] is disk_grid:
        return cache[1]
    R = grid.r_nodes
    z = grid.z_nodes
    r_p = disk_grid.nodes
    nr, nz = grid.shape
    K = np.empty((nr, nz, r_p.size))
    K[:, 0, :] = plane_kernel_matrix(R, disk_grid)
    z_near = 16.0 * float(np.max(np.diff(r_p)))
    fine, M = _source_average_matrix(disk_grid)
    for j in range(1, nz):
        if z[j] < z_near:
            kf = _ring_kernel_raw(R[:, None], z[j], fine[None, :], 0.0)
            K[:, j, :] = kf @ M
        else:
            K[:, j, :] = _ring_kernel_raw(R[:, None], z[j], r_p[None, :], 0.0)
    grid._disk_to_merid = (disk_grid, K)
    return K


def _merid_to_plane_tensor(disk_grid, grid):
    """K[t, p, q] = kappa(r_t, 0; R_p, z_q), cached per grid pair."""
    cache = getattr(disk_grid, "_merid_to_plane", None)
    if cache is not None and cache[0] is grid:
        return cache[1]
    r_t = disk_grid.nodes
    R = grid.r_nodes
    z = grid.z_nodes
    nr, nz = grid.shape
    K = np.empty((r_t.size, nr, nz))
    K[:, :, 0] = _merid_plane_kernel(r_t, grid)
    for q in range(1, nz):
        K[:, :, q] = _ring_kernel_raw(r_t[:, None], 0.0, R[None, :], z[q])
    disk_grid._merid_to_plane = (grid, K)
    return K


# ---------------------------------------------------------------------------
# potential evaluation


def _phi_reduced_source(rho, grid):
    """Quadrature strengths S[p, q] = rho w_r w_z / (2 pi), one mirror copy."""
    return rho * (grid.r_weights[:, None] / _TWO_PI) * grid.z_weights[None, :]


def halo_potential(rho, grid):
    """Potential of an axisymmetric density on its own meridional grid.

    Returns U(R_i, z_j) as an (n_r, n_z) array.  The lower half-space is
    included through the mirror term, so rho is the upper half-plane
    sample of a z-even density.
    """
    rho = np.asarray(rho, dtype=float)
    if rho.shape != grid.shape:
        raise ValueError("density shape does not match grid")
    G = _halo_kernel_tensor(grid)
    S = _phi_reduced_source(rho, grid)
    nr, nz = grid.shape
    out = np.zeros((nr, nz))
    # A[d, i, q] = sum_p G[d, i, p] S[p, q] is the field of source plane
    # q at separation index d.  Materializing all of A costs
    # (2 nz - 1) nr nz doubles, which dominates peak memory at fine
    # grids, so it is built in short d blocks and scattered into the
    # target planes immediately: direct pairs satisfy |j - q| = d,
    # mirror pairs j + q = d.
    block = 64
    for d0 in range(0, 2 * nz - 1, block):
        A = G[d0 : min(d0 + block, 2 * nz - 1)] @ S
        for step, a_d in enumerate(A):
            d = d0 + step
            if d == 0:
                out += a_d
            elif d < nz:
                out[:, d:] += a_d[:, : nz - d]
                out[:, : nz - d] += a_d[:, d:]
            q_lo = max(0, d - nz + 1)
            q_hi = min(d, nz - 1)
            if q_lo <= q_hi:
                cols = np.arange(q_lo, q_hi + 1)
                out[:, d - cols] += a_d[:, cols]
    return -out


def halo_plane_potential(rho, grid, disk_grid):
    """Potential of the 3d density traced on the z = 0 plane.

    Evaluated at the nodes of disk_grid; both z half-spaces contribute
    equally, hence the factor 2.
    """
    rho = np.asarray(rho, dtype=float)
    K = _merid_to_plane_tensor(disk_grid, grid)
    S = _phi_reduced_source(rho, grid)
    return -2.0 * np.tensordot(K, S, axes=([1, 2], [0, 1]))


def disk_potential(sigma, disk_grid):
    """Plane potential of a razor-thin disk at its own grid nodes."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != disk_grid.nodes.shape:
        raise ValueError("density shape does not match grid")
    cached = getattr(disk_grid, "_plane_kernel", None)
    if cached is None:
        cached = plane_kernel_matrix(disk_grid.nodes, disk_grid)
        disk_grid._plane_kernel = cached
    return -cached @ (sigma * disk_grid.weights / _TWO_PI)


def disk_meridional_potential(sigma, disk_grid, grid):
    """Potential of a razor-thin disk on a meridional grid."""
    sigma = np.asarray(sigma, dtype=float)
    K = _disk_to_merid_tensor(grid, disk_grid)
    return -K @ (sigma * disk_grid.weights / _TWO_PI)


def potential_at_points(source, r, z):
    """Direct kernel sum at arbitrary field points away from the source.

    source is a HaloDensity or DiskDensity.  Points closer to a source
    node than the local cell size get the raw kernel, so keep targets
    outside the source support (use the gridded evaluators inside).
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    r, z = np.broadcast_arrays(r, z)
    out = np.zeros(r.shape)
    if isinstance(source, HaloDensity):
        grid = source.grid
        S = _phi_reduced_source(source.values, grid)
        R = grid.r_nodes
        zs = grid.z_nodes
        for q in range(grid.shape[1]):
            k_up = _ring_kernel_raw(r[..., None], z[..., None], R[None, :], zs[q])
            k_dn = _ring_kernel_raw(r[..., None], z[..., None], R[None, :], -zs[q])
            out -= (k_up + k_dn) @ S[:, q]
        return out
    if isinstance(source, DiskDensity):
        k = _ring_kernel_raw(
            r[..., None], z[..., None], source.grid.nodes[None, :], 0.0
        )
        return -(k @ (source.values * source.grid.weights / _TWO_PI))
    raise TypeError(f"unsupported source type {type(source).__name__}")


# ---------------------------------------------------------------------------
# combined field


@dataclass
class PotentialField:
    """Joint potential of a halo and a disk, gridded plus interpolable.

    meridional holds the combined potential on the halo grid, plane the
    combined potential at the disk grid nodes.  Outside the gridded
    domain evaluation falls back to the monopole -M/r.
    """

    grid: MeridionalGrid
    disk_grid: RadialGrid
    meridional: np.ndarray
    plane: np.ndarray
    total_mass: float

    def at_points(self, r, z):
        """Bilinear interpolation of the meridional field at (r, |z|)."""
        r = np.asarray(r, dtype=float)
        z = np.abs(np.asarray(z, dtype=float))
        R = self.grid.r_nodes
        Z = self.grid.z_nodes
        i = np.clip(np.searchsorted(R, r) - 1, 0, R.size - 2)
        j = np.clip(np.searchsorted(Z, z) - 1, 0, Z.size - 2)
        tr = np.clip((r - R[i]) / (R[i + 1] - R[i]), 0.0, 1.0)
        tz = np.clip((z - Z[j]) / (Z[j + 1] - Z[j]), 0.0, 1.0)
        U = self.meridional
        val = (
            U[i, j] * (1 - tr) * (1 - tz)
            + U[i + 1, j] * tr * (1 - tz)
            + U[i, j + 1] * (1 - tr) * tz
            + U[i + 1, j + 1] * tr * tz
        )
        rad = np.hypot(r, z)
        outside = (r > R[-1]) | (z > Z[-1])
        with np.errstate(divide="ignore"):
            mono = -self.total_mass / np.where(rad > 0.0, rad, 1.0)
        return np.where(outside, mono, val)

    def at_plane(self, r):
        """Linear interpolation of the plane trace at z = 0."""
        r = np.asarray(r, dtype=float)
        nodes = self.disk_grid.nodes
        val = np.interp(r, nodes, self.plane)
        with np.errstate(divide="ignore"):
            mono = -self.total_mass / np.where(r > 0.0, r, 1.0)
        return np.where(r > nodes[-1], mono, val)


def effective_potential(halo, disk):
    """Combined potential of a HaloDensity and a DiskDensity."""
    u_mer = halo_potential(halo.values, halo.grid) + disk_meridional_potential(
        disk.values, disk.grid, halo.grid
    )
    u_plane = halo_plane_potential(
        halo.values, halo.grid, disk.grid
    ) + disk_potential(disk.values, disk.grid)
    return PotentialField(
        grid=halo.grid,
        disk_grid=disk.grid,
        meridional=u_mer,
        plane=u_plane,
        total_mass=halo.mass() + disk.mass(),
    )


# ---------------------------------------------------------------------------
# energy inner product


def pot_inner(a, b):
    """Gravitational inner product <a, b> = (1/2) iint a b / |x - y|.

    Positive for positive densities; the potential energy of a body is
    minus its self inner product.  Mixed halo and disk arguments use the
    meridional route (disk potential evaluated on the halo grid).
    """
    a_halo = isinstance(a, HaloDensity)
    b_halo = isinstance(b, HaloDensity)
    if a_halo and b_halo:
        if a.grid is not b.grid:
            raise ValueError("halo densities must share a grid")
        u = halo_potential(b.values, a.grid)
        return -0.5 * float(np.sum(a.values * a.grid.weights * u))
    if not a_halo and not b_halo:
        if a.grid is not b.grid:
            raise ValueError("disk densities must share a grid")
        u = disk_potential(b.values, a.grid)
        return -0.5 * float(np.sum(a.values * a.grid.weights * u))
    halo, disk = (a, b) if a_halo else (b, a)
    u = disk_meridional_potential(disk.values, disk.grid, halo.grid)
    return -0.5 * float(np.sum(halo.values * halo.grid.weights * u))


def mixed_energy_both_ways(halo, disk):
    """Interaction energy int U_disk rho computed along both routes.

    Route one integrates the disk potential against the halo density on
    the meridional grid; route two integrates the halo's plane trace
    against the surface density.  The two discretizations agree to the
    quadrature tolerance, which is a useful consistency check.
    """
    u_disk = disk_meridional_potential(disk.values, disk.grid, halo.grid)
    route_halo = float(np.sum(halo.values * halo.grid.weights * u_disk))
    u_halo = halo_plane_potential(halo.values, halo.grid, disk.grid)
    route_disk = float(np.sum(disk.values * disk.grid.weights * u_halo))
    return route_halo, route_disk
