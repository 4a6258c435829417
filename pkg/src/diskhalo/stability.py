"""Constraint-preserving perturbations and the energy distance.

A coupled steady state minimizes the total energy among states sharing
its masses and Casimir norms.  This module probes that property
directly.  It draws weighted samples from both phase-space
distributions, transports them with explicit volume-preserving maps,
and estimates

    d = iint E (f - f0) dv dx + iint Et (ft - ft0) dvt dxt,

the growth of the linear energy functional whose weight E is the
particle energy in the frozen unperturbed potential.  Each unperturbed
distribution is a decreasing function of its own E, so no
equimeasurable rearrangement can lower the functional and d >= 0 up to
Monte Carlo noise, with equality only for maps that fix the state.

The exact change of the full energy splits as

    H(f, ft) - H(f0, ft0) = d - <dr, dr> - <ds, ds> - 2 <dr, ds>

where dr and ds are the two density increments and <.,.> is the
gravitational inner product.  expansion_check evaluates both sides by
genuinely different routes.  Velocity maps leave densities fixed, so
there the energy change is pure kinetic and has a closed grid-level
form.  Plane translations displace whole bodies, and every inner
product of a displaced axisymmetric body against a fixed one reduces
to an azimuthal lag average of the stored single-species potentials.
Comparing those deterministic values with the sampled d closes the
identity without ever evaluating one side in terms of the other.

All maps act within the disk plane or on velocities only, keep the
halo reflection-symmetric about that plane, and have unit phase-space
Jacobian determinant, so masses and Casimir norms are preserved
exactly.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import SupportEscapeError
from .polytropes import moment_coefficients

__all__ = [
    "ShearProfile",
    "Perturbation",
    "SpeciesSamples",
    "PerturbedState",
    "DistanceResult",
    "ExpansionResult",
    "perturb",
    "transport",
    "map_jacobians",
    "distance_d",
    "expansion_check",
    "battery",
]

_KINDS = ("plane-translation", "in-plane-boost", "velocity-shear")
_COMPONENTS = ("halo", "disk", "both")


@dataclass(frozen=True)
class ShearProfile:
    """Bump function chi whose gradient drives a velocity shear.

    chi(x) = amplitude * exp(-1 / (1 - t)) inside t < 1 and zero
    outside, with t = |x - center|^2 / width^2.  The center is pinned
    to the disk plane, so chi is even in z and the z component of its
    gradient is odd, which keeps a reflection-symmetric halo
    reflection-symmetric.  All derivatives vanish at t = 1: the induced
    map is smooth and compactly supported.
    """

    center: tuple = (0.0, 0.0)
    width: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        c = (float(self.center[0]), float(self.center[1]))
        object.__setattr__(self, "center", c)
        if not (np.isfinite(self.width) and self.width > 0.0):
            raise ValueError("width must be positive")
        if not np.isfinite(self.amplitude):
            raise ValueError("amplitude must be finite")

    def _offsets(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        center = np.zeros(points.shape[1])
        center[0], center[1] = self.center
        return points - center[None, :]

    def _bump(self, t):
        """exp(-1/(1-t)) and its first two t-derivatives, zero past t = 1.

        The exponential underflows long before the 1/(1-t) powers
        overflow, so the cutoff is clamped before forming them.
        """
        inside = t < 1.0
        om = np.where(inside, 1.0 - t, 1.0)
        phi = np.where(inside, np.exp(-1.0 / om), 0.0)
        omc = np.maximum(om, 1e-3)
        d1 = -phi / omc**2
        d2 = phi * (1.0 / omc**4 - 2.0 / omc**3)
        return phi, d1, d2

    def value(self, points):
        off = self._offsets(points)
        t = np.einsum("ij,ij->i", off, off) / self.width**2
        phi, _, _ = self._bump(t)
        return self.amplitude * phi

    def gradient(self, points):
        off = self._offsets(points)
        t = np.einsum("ij,ij->i", off, off) / self.width**2
        _, d1, _ = self._bump(t)
        return self.amplitude * (2.0 / self.width**2) * d1[:, None] * off

    def hessian(self, points):
        off = self._offsets(points)
        w2 = self.width**2
        t = np.einsum("ij,ij->i", off, off) / w2
        _, d1, d2 = self._bump(t)
        dim = off.shape[1]
        outer = off[:, :, None] * off[:, None, :]
        return self.amplitude * (
            (2.0 / w2) * d1[:, None, None] * np.eye(dim)[None, :, :]
            + (4.0 / w2**2) * d2[:, None, None] * outer
        )

    def ring_mean_gradient_sq(self, radius, height=0.0, n_phi=96):
        """Azimuthal mean of |grad chi|^2 over the circle of given
        cylindrical radius and height.

        The squared gradient depends on position only through the
        squared distance to the center, so the mean is a quadrature
        over the angle between the point and the center.
        """
        radius = np.asarray(radius, dtype=float)
        height = np.asarray(height, dtype=float)
        cos_phi, wgt = _phi_nodes(n_phi)
        c = float(np.hypot(*self.center))
        out = 0.0
        for cp, wp in zip(cos_phi, wgt):
            sq = radius**2 + c**2 - 2.0 * radius * c * cp + height**2
            t = sq / self.width**2
            _, d1, _ = self._bump(t)
            out = out + wp * (2.0 * self.amplitude / self.width**2) ** 2 * d1**2 * sq
        return out


@dataclass(frozen=True)
class Perturbation:
    """One volume-preserving map of phase space and its target species.

    Kinds: "plane-translation" shifts positions by magnitude times the
    in-plane direction, "in-plane-boost" shifts velocities by the same
    vector, and "velocity-shear" adds magnitude * grad(chi) to the
    velocity at each position.  Every kind preserves phase-space
    volume, hence all rearrangement invariants (masses and Casimir
    norms) of both species, and maps plane-confined disk stars to
    plane-confined disk stars.
    """

    kind: str
    magnitude: float
    component: str = "both"
    direction: tuple = (1.0, 0.0)
    shear_profile: ShearProfile = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.component not in _COMPONENTS:
            raise ValueError(f"unknown component {self.component!r}")
        if not (np.isfinite(self.magnitude) and self.magnitude >= 0.0):
            raise ValueError("magnitude must be finite and nonnegative")
        d = np.asarray(self.direction, dtype=float)
        if d.shape != (2,) or not np.all(np.isfinite(d)):
            raise ValueError("direction must be a finite in-plane 2-vector")
        norm = float(np.hypot(d[0], d[1]))
        if norm == 0.0:
            raise ValueError("direction must be nonzero")
        object.__setattr__(self, "direction", (float(d[0] / norm), float(d[1] / norm)))
        if self.kind == "velocity-shear":
            if self.shear_profile is None:
                raise ValueError("velocity-shear needs a shear_profile")
        elif self.shear_profile is not None:
            raise ValueError("shear_profile only applies to velocity-shear")

    def affects(self, species):
        return self.component in (species, "both")


def transport(perturbation, positions, velocities):
    """Apply the map to phase-space points, returning new arrays.

    Positions are (n, 3) for the halo or (n, 2) for the disk; the
    in-plane direction is padded with a zero vertical component.
    """
    positions = np.asarray(positions, dtype=float)
    velocities = np.asarray(velocities, dtype=float)
    dim = positions.shape[1]
    e = np.zeros(dim)
    e[0], e[1] = perturbation.direction
    eps = perturbation.magnitude
    if perturbation.kind == "plane-translation":
        return positions + eps * e, velocities.copy()
    if perturbation.kind == "in-plane-boost":
        return positions.copy(), velocities + eps * e
    return positions.copy(), velocities + eps * perturbation.shear_profile.gradient(positions)


def map_jacobians(perturbation, positions):
    """Phase-space Jacobians of the map at each position, (n, 2d, 2d).

    Translations and boosts are rigid shifts with identity Jacobian.
    The shear writes magnitude times the Hessian of chi into the lower
    left block; that block-triangular structure forces determinant one
    no matter the profile, which is what makes the map measure
    preserving.
    """
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    n, dim = positions.shape
    jac = np.tile(np.eye(2 * dim), (n, 1, 1))
    if perturbation.kind == "velocity-shear":
        jac[:, dim:, :dim] = perturbation.magnitude * perturbation.shear_profile.hessian(
            positions
        )
    return jac


# ---------------------------------------------------------------------------
# sampling


@dataclass
class SpeciesSamples:
    """Weighted phase-space samples of one species, before and after the map.

    Samples come in antithetic quadruples (identity, velocity flip,
    half-turn rotation, both) sharing a weight, so odd moments of the
    base state vanish exactly.  Weights are self-normalized to the
    species mass.  pot_before and pot_after hold the frozen combined
    potential at the original and transported positions.
    """

    positions: np.ndarray
    velocities: np.ndarray
    weights: np.ndarray
    new_positions: np.ndarray
    new_velocities: np.ndarray
    pot_before: np.ndarray
    pot_after: np.ndarray

    def __post_init__(self):
        n = self.weights.size
        if n < 64 or n % 4:
            raise ValueError("species needs at least 64 samples in quadruples")
        if np.any(self.weights < 0.0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite and nonnegative")

    @property
    def n(self):
        return self.weights.size

    def kinetic_change(self):
        new = np.einsum("ij,ij->i", self.new_velocities, self.new_velocities)
        old = np.einsum("ij,ij->i", self.velocities, self.velocities)
        return 0.5 * (new - old)

    def energy_change(self):
        """Per-sample E at the image minus E at the original point."""
        return self.kinetic_change() + self.pot_after - self.pot_before


def _antithetic_stack(x, v, w, plane_flip):
    """Expand base draws into quadruples sharing the weight.

    plane_flip holds -1 on in-plane axes and +1 elsewhere; the grid
    cell, hence the weight, is invariant under both symmetries.
    """
    xr = x * plane_flip
    vr = v * plane_flip
    positions = np.stack([x, x, xr, xr], axis=1).reshape(-1, x.shape[1])
    velocities = np.stack([v, -v, vr, -vr], axis=1).reshape(-1, x.shape[1])
    weights = np.repeat(w, 4)
    return positions, velocities, weights


def _unit_vectors(rng, n, dim):
    raw = rng.normal(size=(n, dim))
    norms = np.linalg.norm(raw, axis=1)
    small = norms < 1e-12
    if np.any(small):
        raw[small] = 0.0
        raw[small, 0] = 1.0
        norms[small] = 1.0
    return raw / norms[:, None]


def _sample_halo(state, field, n_groups, rng):
    """Draw weighted halo samples from the polytropic distribution.

    Cells are chosen by their grid mass, positions uniformly inside the
    chosen cell (area element in R^2, mirrored in z), and the weight
    corrects the spatial proposal to the interpolated profile.  Speeds
    are exact draws of the conditional law: with u ~ Beta(3/2, k + 1)
    the speed sqrt(2 a u) has density proportional to
    v^2 (a - v^2/2)^k on its support, where a is the local gap.
    """
    grid = state.grid
    k = state.exponents.k
    mult = state.multipliers
    c_d = moment_coefficients(k, "halo")[0]

    r_edges = grid.r_cell_edges()
    z_edges = grid.z_cell_edges()
    cell_mass = (state.rho * grid.weights).ravel()
    prob = cell_mass / cell_mass.sum()
    flat = rng.choice(prob.size, size=n_groups, p=prob)
    ir, iz = np.unravel_index(flat, state.rho.shape)

    r_lo, r_hi = r_edges[ir], r_edges[ir + 1]
    z_lo, z_hi = z_edges[iz], z_edges[iz + 1]
    rad = np.sqrt(r_lo**2 + rng.random(n_groups) * (r_hi**2 - r_lo**2))
    angle = 2.0 * np.pi * rng.random(n_groups)
    z_abs = z_lo + rng.random(n_groups) * (z_hi - z_lo)
    z_sign = np.where(rng.random(n_groups) < 0.5, -1.0, 1.0)
    x = np.column_stack([rad * np.cos(angle), rad * np.sin(angle), z_sign * z_abs])

    volume = np.pi * (r_hi**2 - r_lo**2) * 2.0 * (z_hi - z_lo)
    proposal = prob[flat] / volume
    gap = np.maximum(mult.e0_halo - field.at_points(rad, z_abs), 0.0)
    density = c_d * mult.lam_halo ** (-k) * gap ** (k + 1.5)
    base_w = np.where(proposal > 0.0, density / np.maximum(proposal, 1e-300), 0.0)

    u = rng.beta(1.5, k + 1.0, size=n_groups)
    speed = np.sqrt(2.0 * gap * u)
    v = speed[:, None] * _unit_vectors(rng, n_groups, 3)

    return _antithetic_stack(x, v, base_w, np.array([-1.0, -1.0, 1.0]))


def _sample_disk(state, field, n_groups, rng):
    """Disk analogue of _sample_halo, confined to the plane.

    The speed conditional is u ~ Beta(1, kt + 1) with speed
    sqrt(2 a u), matching the density vt (a - vt^2/2)^kt.
    """
    dg = state.disk_grid
    kt = state.exponents.kt
    mult = state.multipliers
    c_d = moment_coefficients(kt, "disk")[0]

    edges = dg.cell_edges()
    cell_mass = state.sigma * dg.weights
    prob = cell_mass / cell_mass.sum()
    idx = rng.choice(prob.size, size=n_groups, p=prob)

    r_lo, r_hi = edges[idx], edges[idx + 1]
    rad = np.sqrt(r_lo**2 + rng.random(n_groups) * (r_hi**2 - r_lo**2))
    angle = 2.0 * np.pi * rng.random(n_groups)
    x = np.column_stack([rad * np.cos(angle), rad * np.sin(angle)])

    area = np.pi * (r_hi**2 - r_lo**2)
    proposal = prob[idx] / area
    gap = np.maximum(mult.e0_disk - field.at_plane(rad), 0.0)
    density = c_d * mult.lam_disk ** (-kt) * gap ** (kt + 1.0)
    base_w = np.where(proposal > 0.0, density / np.maximum(proposal, 1e-300), 0.0)

    u = rng.beta(1.0, kt + 1.0, size=n_groups)
    speed = np.sqrt(2.0 * gap * u)
    v = speed[:, None] * _unit_vectors(rng, n_groups, 2)

    return _antithetic_stack(x, v, base_w, np.array([-1.0, -1.0]))


@dataclass
class PerturbedState:
    """A base state plus transported samples of the affected species."""

    base: object
    perturbation: Perturbation
    halo: SpeciesSamples
    disk: SpeciesSamples
    n_batches: int = 32

    def __post_init__(self):
        if self.halo is None and self.disk is None:
            raise ValueError("perturbation touches no species present in the state")
        if self.n_batches < 8:
            raise ValueError("need at least 8 batches for error estimates")


def _finish_species(samples, perturbation, evaluate, bounds, label):
    """Transport stacked samples, evaluate the frozen potential, and
    normalize weights to the species mass."""
    x, v, w = samples
    total = w.sum()
    if total <= 0.0:
        raise ValueError(f"{label} samples carry no weight")
    w = w * (bounds["mass"] / total)
    x_new, v_new = transport(perturbation, x, v)
    radius_new = np.hypot(x_new[:, 0], x_new[:, 1])
    if radius_new.max() > bounds["r_max"]:
        raise SupportEscapeError(
            f"{label} samples leave the gridded domain: radius "
            f"{radius_new.max():.6g} exceeds {bounds['r_max']:.6g}"
        )
    pot_before = evaluate(x)
    pot_after = evaluate(x_new)
    return SpeciesSamples(
        positions=x,
        velocities=v,
        weights=w,
        new_positions=x_new,
        new_velocities=v_new,
        pot_before=pot_before,
        pot_after=pot_after,
    )


def perturb(state, perturbation, n_samples=200_000, n_batches=32):
    """Sample the affected species and transport them with the map.

    n_samples counts emitted samples per affected species and is
    rounded down to a whole number of antithetic quadruples.  Species
    the map does not touch contribute exactly zero to every estimator
    here, so they are not sampled.  Raises SupportEscapeError if any
    transported sample leaves the gridded potential domain.
    """
    n_groups = int(n_samples) // 4
    if n_groups < 16:
        raise ValueError("need at least 64 samples")
    if n_batches < 8 or n_groups < n_batches:
        raise ValueError("too few sample groups for the requested batches")
    rng = np.random.default_rng(perturbation.seed)
    field = state.potential_field()

    halo = None
    if perturbation.affects("halo") and state.constraints.mass_halo > 0.0:
        raw = _sample_halo(state, field, n_groups, rng)
        halo = _finish_species(
            raw,
            perturbation,
            lambda pts: field.at_points(np.hypot(pts[:, 0], pts[:, 1]), pts[:, 2]),
            {"mass": state.constraints.mass_halo, "r_max": state.grid.r_max},
            "halo",
        )
        if np.abs(halo.new_positions[:, 2]).max() > state.grid.z_max:
            raise SupportEscapeError("halo samples leave the vertical domain")

    disk = None
    if perturbation.affects("disk") and state.constraints.mass_disk > 0.0:
        raw = _sample_disk(state, field, n_groups, rng)
        disk = _finish_species(
            raw,
            perturbation,
            lambda pts: field.at_plane(np.hypot(pts[:, 0], pts[:, 1])),
            {"mass": state.constraints.mass_disk, "r_max": state.disk_grid.rmax},
            "disk",
        )

    return PerturbedState(
        base=state,
        perturbation=perturbation,
        halo=halo,
        disk=disk,
        n_batches=n_batches,
    )


# ---------------------------------------------------------------------------
# estimators


class DistanceResult(NamedTuple):
    value: float
    sigma: float


def _batch_sigma(group_sums, n_batches):
    """Batch-means standard error of the total of group_sums."""
    parts = np.array_split(group_sums, n_batches)
    sums = np.array([p.sum() for p in parts])
    b = sums.size
    return float(np.sqrt(b / (b - 1) * np.sum((sums - sums.mean()) ** 2)))


def distance_d(perturbed):
    """Estimate d with a batch-means standard error.

    Per sample the integrand is the weight times the change of the
    frozen particle energy along the map.  Antithetic quadruples cancel
    the odd terms: a pure boost returns eps^2 M / 2 exactly and a shear
    returns the nonnegative quadratic term alone.
    """
    value = 0.0
    variance = 0.0
    for species in (perturbed.halo, perturbed.disk):
        if species is None:
            continue
        contrib = species.weights * species.energy_change()
        groups = contrib.reshape(-1, 4).sum(axis=1)
        value += groups.sum()
        sigma = _batch_sigma(groups, perturbed.n_batches)
        variance += sigma**2
    return DistanceResult(float(value), float(np.sqrt(variance)))


# ---------------------------------------------------------------------------
# displaced inner products

# An in-plane translation of an axisymmetric body is not axisymmetric,
# so its inner products cannot be formed on the meridional grids
# directly: projecting the increment onto the grid would erase the
# dipole that dominates it.  Instead every needed pairing has the form
# integral of (density of body A) times (potential of body B evaluated
# at positions displaced by a), and for axisymmetric A the angular part
# is a one-dimensional lag average of the interpolated potential.


def _phi_nodes(n_phi):
    """Trapezoid nodes for averaging an even periodic function."""
    phi = np.linspace(0.0, np.pi, n_phi + 1)
    weights = np.full(n_phi + 1, 1.0 / n_phi)
    weights[0] *= 0.5
    weights[-1] *= 0.5
    return np.cos(phi), weights


def _interp_meridional(grid, values, mass, radius, z_abs):
    """Bilinear meridional interpolation with a monopole tail."""
    R = grid.r_nodes
    Z = grid.z_nodes
    radius, z_abs = np.broadcast_arrays(radius, z_abs)
    i = np.clip(np.searchsorted(R, radius) - 1, 0, R.size - 2)
    j = np.clip(np.searchsorted(Z, z_abs) - 1, 0, Z.size - 2)
    tr = np.clip((radius - R[i]) / (R[i + 1] - R[i]), 0.0, 1.0)
    tz = np.clip((z_abs - Z[j]) / (Z[j + 1] - Z[j]), 0.0, 1.0)
    val = (
        values[i, j] * (1 - tr) * (1 - tz)
        + values[i + 1, j] * tr * (1 - tz)
        + values[i, j + 1] * (1 - tr) * tz
        + values[i + 1, j + 1] * tr * tz
    )
    rad = np.hypot(radius, z_abs)
    outside = radius > R[-1]
    with np.errstate(divide="ignore"):
        mono = -mass / np.where(rad > 0.0, rad, 1.0)
    return np.where(outside, mono, val)


def _interp_plane(nodes, values, mass, radius):
    """Linear interpolation on the plane with a monopole tail."""
    val = np.interp(radius, nodes, values)
    with np.errstate(divide="ignore"):
        mono = -mass / np.where(radius > 0.0, radius, 1.0)
    return np.where(radius > nodes[-1], mono, val)


def _lag_halo_against(state, values, mass, displacement, n_phi=96):
    """Integral of the halo density against a meridional potential
    evaluated at positions displaced within the plane."""
    grid = state.grid
    cos_phi, wgt = _phi_nodes(n_phi)
    R = grid.r_nodes[:, None]
    a = displacement
    mean = np.zeros(grid.shape)
    for cp, wp in zip(cos_phi, wgt):
        disp = np.sqrt(np.maximum(R**2 + 2.0 * a * R * cp + a * a, 0.0))
        mean += wp * _interp_meridional(grid, values, mass, disp, grid.z_nodes[None, :])
    return float(np.sum(state.rho * grid.weights * mean))


def _lag_disk_against(state, values, mass, displacement, n_phi=96):
    """Integral of the disk density against a plane potential evaluated
    at positions displaced within the plane."""
    dg = state.disk_grid
    cos_phi, wgt = _phi_nodes(n_phi)
    r = dg.nodes
    a = displacement
    mean = np.zeros(r.size)
    for cp, wp in zip(cos_phi, wgt):
        disp = np.sqrt(np.maximum(r**2 + 2.0 * a * r * cp + a * a, 0.0))
        mean += wp * _interp_plane(dg.nodes, values, mass, disp)
    return float(np.sum(state.sigma * dg.weights * mean))


def _translation_terms(state, perturbed):
    """Quadratic inner products and the exact energy change for a
    translation, from displaced-body inner products.

    With <A_a, B> the inner product of body A displaced by a against
    body B, self terms obey <dr, dr> = 2<r, r> - 2<r_a, r> and the
    energy change of a one-sided translation is the mixed-term lag
    difference; translating both bodies together changes nothing.
    """
    a = perturbed.perturbation.magnitude
    halo_moved = perturbed.halo is not None
    disk_moved = perturbed.disk is not None
    mass_h = state.constraints.mass_halo
    mass_d = state.constraints.mass_disk

    quad_halo = quad_disk = quad_cross = 0.0
    energy_change = 0.0
    if halo_moved:
        base = _lag_halo_against(state, state.u_halo_mer, mass_h, 0.0)
        moved = _lag_halo_against(state, state.u_halo_mer, mass_h, a)
        quad_halo = moved - base
    if disk_moved:
        base = _lag_disk_against(state, state.u_disk_plane, mass_d, 0.0)
        moved = _lag_disk_against(state, state.u_disk_plane, mass_d, a)
        quad_disk = moved - base
    if mass_h > 0.0 and mass_d > 0.0 and (halo_moved or disk_moved):
        base = _lag_halo_against(state, state.u_disk_mer, mass_d, 0.0)
        moved = _lag_halo_against(state, state.u_disk_mer, mass_d, a)
        lag = moved - base
        if halo_moved and disk_moved:
            quad_cross = lag
        else:
            energy_change = lag
    return quad_halo, quad_disk, quad_cross, energy_change


@dataclass(frozen=True)
class ExpansionResult:
    """Both sides of the exact energy expansion and their mismatch.

    h_change_direct is the energy change of the mapped state computed
    without the samples: zero for a joint translation, a lag difference
    of the mixed term for a one-sided one, and the closed kinetic
    increment for velocity maps.  h_change_expansion is the sampled d
    minus the quadratic inner products.  The residual is their
    difference and carries the Monte Carlo error of d.
    """

    residual: float
    sigma: float
    d_value: float
    d_sigma: float
    quad_halo: float
    quad_disk: float
    quad_cross: float
    h_change_direct: float
    h_change_expansion: float


def expansion_check(perturbed):
    """Evaluate the exact energy expansion around the base state.

    The sampled side is d from distance_d.  The direct side rebuilds
    the energy change from grid data alone, so the two agree only if
    the sampling, the transport, and the stored fields are mutually
    consistent.  Velocity maps leave every position fixed: the
    quadratic terms vanish identically and the direct change is the
    kinetic integral of the shear field (a boost reduces to
    eps^2 M / 2).
    """
    state = perturbed.base
    p = perturbed.perturbation
    dist = distance_d(perturbed)

    if p.kind == "plane-translation":
        quad_halo, quad_disk, quad_cross, direct = _translation_terms(state, perturbed)
    else:
        quad_halo = quad_disk = quad_cross = 0.0
        direct = 0.0
        if p.kind == "in-plane-boost":
            if perturbed.halo is not None:
                direct += 0.5 * p.magnitude**2 * state.constraints.mass_halo
            if perturbed.disk is not None:
                direct += 0.5 * p.magnitude**2 * state.constraints.mass_disk
        else:
            profile = p.shear_profile
            if perturbed.halo is not None:
                grid = state.grid
                mean = profile.ring_mean_gradient_sq(
                    grid.r_nodes[:, None], grid.z_nodes[None, :]
                )
                direct += 0.5 * p.magnitude**2 * float(
                    np.sum(state.rho * grid.weights * mean)
                )
            if perturbed.disk is not None:
                dg = state.disk_grid
                mean = profile.ring_mean_gradient_sq(dg.nodes)
                direct += 0.5 * p.magnitude**2 * float(
                    np.sum(state.sigma * dg.weights * mean)
                )

    quad_total = quad_halo + quad_disk + 2.0 * quad_cross
    expansion = dist.value - quad_total
    return ExpansionResult(
        residual=float(direct - expansion),
        sigma=dist.sigma,
        d_value=dist.value,
        d_sigma=dist.sigma,
        quad_halo=float(quad_halo),
        quad_disk=float(quad_disk),
        quad_cross=float(quad_cross),
        h_change_direct=float(direct),
        h_change_expansion=float(expansion),
    )


# ---------------------------------------------------------------------------
# randomized battery


def _battery_scales(state):
    """Length and velocity scales that keep random maps inside the domain."""
    scales = {}
    if state.constraints.mass_halo > 0.0:
        support = state.support_radius_halo()
        scales["halo"] = {
            "margin": state.grid.r_max - support,
            "support": support,
            "gap": float(state.gap_halo().max()),
        }
    if state.constraints.mass_disk > 0.0:
        support = state.support_radius_disk()
        scales["disk"] = {
            "margin": state.disk_grid.rmax - support,
            "support": support,
            "gap": float(state.gap_disk().max()),
        }
    return scales


def battery(state, count=50, n_samples=200_000, seed=1889, n_batches=32):
    """Randomized sweep of perturbations with distance diagnostics.

    Draws count maps of mixed kind, component, and magnitude, sized so
    every transported sample stays on the grids, and reports for each
    the estimated distance, its standard error, a nonnegativity flag at
    three standard errors, a strict positivity flag (no map here is the
    identity), and for boosts the exact prediction eps^2 M / 2.
    """
    rng = np.random.default_rng(seed)
    scales = _battery_scales(state)
    present = list(scales)
    if not present:
        raise ValueError("state has no species to perturb")
    v_ref = np.sqrt(2.0 * max(s["gap"] for s in scales.values()))

    rows = []
    for _ in range(count):
        kind = _KINDS[rng.integers(len(_KINDS))]
        if len(present) == 2:
            component = ("halo", "disk", "both")[rng.integers(3)]
        else:
            component = present[0]
        affected = [s for s in present if component in (s, "both")]
        angle = 2.0 * np.pi * rng.random()
        direction = (np.cos(angle), np.sin(angle))
        profile = None
        if kind == "plane-translation":
            margin = min(scales[s]["margin"] for s in affected)
            magnitude = float(margin * rng.uniform(0.15, 0.45))
        elif kind == "in-plane-boost":
            magnitude = float(v_ref * rng.uniform(0.02, 0.08))
        else:
            extent = max(scales[s]["support"] for s in affected)
            width = float(extent * rng.uniform(0.6, 1.2))
            c_rad = extent * 0.3 * rng.random()
            c_ang = 2.0 * np.pi * rng.random()
            profile = ShearProfile(
                center=(c_rad * np.cos(c_ang), c_rad * np.sin(c_ang)),
                width=width,
                amplitude=width,
            )
            magnitude = float(v_ref * rng.uniform(0.02, 0.08))
        p = Perturbation(
            kind=kind,
            magnitude=magnitude,
            component=component,
            direction=direction,
            shear_profile=profile,
            seed=int(rng.integers(2**31)),
        )
        ps = perturb(state, p, n_samples=n_samples, n_batches=n_batches)
        dist = distance_d(ps)
        row = {
            "kind": kind,
            "component": component,
            "magnitude": magnitude,
            "seed": p.seed,
            "value": dist.value,
            "sigma": dist.sigma,
            "nonnegative": dist.value >= -3.0 * dist.sigma,
            "detectably_positive": dist.value > 3.0 * dist.sigma,
        }
        if kind == "in-plane-boost":
            mass = sum(getattr(state.constraints, f"mass_{s}") for s in affected)
            predicted = 0.5 * magnitude**2 * mass
            row["predicted"] = predicted
            row["prediction_ok"] = bool(
                abs(dist.value - predicted) <= max(3.0 * dist.sigma, 1e-10 * abs(predicted))
            )
        rows.append(row)
    return rows
