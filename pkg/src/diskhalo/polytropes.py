"""Polytropic steady states of the halo and the disk, decoupled case.

Both species follow the same ansatz: the phase-space density is a power
of the available energy gap,

    f(x, v) = ((E0 - E) / lam)_+^k,      E = |v|^2 / 2 + U(x),

with exponent k for the 3d halo and kt for the razor-thin disk.  The
velocity integrals then close in terms of the local gap a = E0 - U, and
the self-consistency problem reduces to a radial equation.

The halo case maps onto a second order radial ODE solved once per
exponent and rescaled; the disk case has no ODE form (the potential is
nonlocal on the plane) and is solved by damped fixed-point iteration on
the surface density.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import beta as beta_fn

from .errors import InfeasibleComponentError, ConvergenceError, UnboundedStateError
from .potentials import DiskDensity, HaloDensity, disk_potential
from .quadrature import RadialGrid, integrate, radial_grid

_TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# model parameters


@dataclass(frozen=True)
class Exponents:
    """Polytropic exponents of the halo (k) and the disk (kt).

    The ansatz is defined for 0 < k < 7/2 and 0 < kt < 2; compactly
    supported steady states additionally need k < 5/2 and kt < 1, which
    the solvers enforce separately.
    """

    k: float
    kt: float

    def __post_init__(self):
        if not 0.0 < self.k < 3.5:
            raise ValueError("halo exponent must satisfy 0 < k < 7/2")
        if not 0.0 < self.kt < 2.0:
            raise ValueError("disk exponent must satisfy 0 < kt < 2")


@dataclass(frozen=True)
class ConstraintVector:
    """Target masses and Casimir norms, one pair per species.

    norm_halo is ||f||_{1 + 1/k}, norm_disk is ||ft||_{1 + 1/kt}.  A
    species with both entries zero is absent.
    """

    mass_halo: float
    norm_halo: float
    mass_disk: float
    norm_disk: float

    def __post_init__(self):
        for v in (self.mass_halo, self.norm_halo, self.mass_disk, self.norm_disk):
            if v < 0.0:
                raise ValueError("constraints must be nonnegative")
        if (self.mass_halo > 0.0) != (self.norm_halo > 0.0):
            raise ValueError("halo mass and norm must vanish together")
        if (self.mass_disk > 0.0) != (self.norm_disk > 0.0):
            raise ValueError("disk mass and norm must vanish together")

    def __add__(self, other):
        return ConstraintVector(
            self.mass_halo + other.mass_halo,
            self.norm_halo + other.norm_halo,
            self.mass_disk + other.mass_disk,
            self.norm_disk + other.norm_disk,
        )

    def scaled(self, s):
        return ConstraintVector(
            s * self.mass_halo,
            s * self.norm_halo,
            s * self.mass_disk,
            s * self.norm_disk,
        )


@dataclass(frozen=True)
class Multipliers:
    """Lagrange multipliers of the variational problem.

    e0 multiplies the mass constraint (cutoff energy), lam the Casimir
    constraint (phase-space amplitude scale).
    """

    e0_halo: float
    lam_halo: float
    e0_disk: float
    lam_disk: float


# ---------------------------------------------------------------------------
# closed velocity moments


def moment_coefficients(k, kind):
    """Coefficients (density, kinetic, casimir) of the gap powers.

    For the 3d ansatz with gap a and scale lam:
        density  = c_d lam^-k     a^(k + 3/2)
        kinetic  = c_k lam^-k     a^(k + 5/2)
        casimir  = c_c lam^-(k+1) a^(k + 5/2)
    and for the planar ansatz:
        density  = c_d lam^-kt     a^(kt + 1)
        kinetic  = c_k lam^-kt     a^(kt + 2)
        casimir  = c_c lam^-(kt+1) a^(kt + 2)
    where kinetic is the density of |v|^2/2 f and casimir the density of
    f^(1 + 1/k).
    """
    if k <= 0.0:
        raise ValueError("moment exponent must be positive")
    if kind == "halo":
        amp = 2.0 ** 2.5 * np.pi
        return (
            amp * beta_fn(1.5, k + 1.0),
            amp * beta_fn(2.5, k + 1.0),
            amp * beta_fn(1.5, k + 2.0),
        )
    if kind == "disk":
        return (
            _TWO_PI / (k + 1.0),
            _TWO_PI / ((k + 1.0) * (k + 2.0)),
            _TWO_PI / (k + 2.0),
        )
    raise ValueError(f"unknown kind {kind!r}")


def velocity_moments(gap, k, lam, kind):
    """Pointwise velocity moments of the polytropic ansatz.

    gap is E0 - U (any shape); negative gaps contribute nothing.
    Returns (density, kinetic_density, casimir_density).
    """
    c_d, c_k, c_c = moment_coefficients(k, kind)
    a = np.maximum(np.asarray(gap, dtype=float), 0.0)
    low = k + 1.5 if kind == "halo" else k + 1.0
    return (
        c_d * lam ** -k * a ** low,
        c_k * lam ** -k * a ** (low + 1.0),
        c_c * lam ** -(k + 1.0) * a ** (low + 1.0),
    )


# ---------------------------------------------------------------------------
# radial equation for the halo


@dataclass
class EmdenSolution:
    """Solution of (r^2 y')' / r^2 = -c max(y, 0)^n up to its first zero."""

    n: float
    c: float
    y0: float
    radius: float
    yprime_edge: float
    _dense: object = field(repr=False)

    @property
    def mass(self):
        """Total integral of c y^n r^2, equal to -R^2 y'(R)."""
        return -(self.radius ** 2) * self.yprime_edge

    def __call__(self, r):
        """Evaluate y(r); clips to the series start below the first node."""
        r = np.asarray(r, dtype=float)
        lo, hi = self._dense.t_min, self._dense.t_max
        rc = np.clip(r, lo, hi)
        y = self._dense(np.atleast_1d(rc))[0]
        # series continuation below the integration start
        small = np.atleast_1d(r) < lo
        if np.any(small):
            rr = np.atleast_1d(r)[small]
            y[small] = self.y0 - self.c * self.y0 ** self.n * rr ** 2 / 6.0
        return y if y.size > 1 else float(y[0])


def emden_fowler_solve(n, c=1.0, y0=1.0, r_limit=None):
    """Integrate the radial equation out to the first zero of y.

    Starts with the series y = y0 - c y0^n r^2/6 at a small radius to
    avoid the coordinate singularity, then tracks (y, w = r^2 y') with a
    terminal zero-crossing event.  Raises UnboundedStateError when no
    zero occurs (n >= 5 has none for any positive c and y0).
    """
    if n <= 0.0:
        raise ValueError("polytropic index must be positive")
    if c <= 0.0 or y0 <= 0.0:
        raise ValueError("c and y0 must be positive")
    # natural units: y ~ y0, r ~ (c y0^(n-1))^(-1/2)
    r_unit = (c * y0 ** (n - 1.0)) ** -0.5
    if r_limit is None:
        r_limit = 40.0 * r_unit if n < 4.2 else 200.0 * r_unit
    r_start = 1e-4 * r_unit

    def rhs(r, state):
        y, w = state
        return [w / (r * r), -c * r * r * max(y, 0.0) ** n]

    def hit_zero(r, state):
        return state[0]

    hit_zero.terminal = True
    hit_zero.direction = -1.0

    y_start = y0 - c * y0 ** n * r_start ** 2 / 6.0
    w_start = -c * y0 ** n * r_start ** 3 / 3.0
    sol = solve_ivp(
        rhs,
        (r_start, r_limit),
        [y_start, w_start],
        method="RK45",
        rtol=1e-10,
        atol=[1e-13 * y0, 1e-13 * y0 * r_unit],
        events=hit_zero,
        dense_output=True,
    )
    if sol.t_events[0].size == 0:
        raise UnboundedStateError(
            f"no finite support radius found for n = {n} within r = {r_limit:g}"
        )
    radius = float(sol.t_events[0][0])
    w_edge = float(sol.y_events[0][0][1])
    return EmdenSolution(
        n=n,
        c=c,
        y0=y0,
        radius=radius,
        yprime_edge=w_edge / radius ** 2,
        _dense=sol.sol,
    )


# ---------------------------------------------------------------------------
# steady states


@dataclass
class SteadyState3D:
    """Decoupled polytropic halo: spherically symmetric steady state."""

    k: float
    mass: float
    norm: float
    e0: float
    lam: float
    radius: float
    r: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    ekin: float = 0.0
    epot: float = 0.0

    def gap(self, r):
        """Energy gap E0 - U at radius r (monopole continuation outside)."""
        r = np.asarray(r, dtype=float)
        inside = np.interp(r, self.r, self.e0 - self.u)
        with np.errstate(divide="ignore"):
            outside = self.e0 + self.mass / np.where(r > 0.0, r, 1.0)
        return np.where(r <= self.radius, np.maximum(inside, 0.0), outside)

    def density_at(self, r):
        return np.interp(np.asarray(r, dtype=float), self.r, self.rho, right=0.0)

    def potential_at(self, r):
        r = np.asarray(r, dtype=float)
        inside = np.interp(r, self.r, self.u)
        with np.errstate(divide="ignore"):
            outside = -self.mass / np.where(r > 0.0, r, 1.0)
        return np.where(r <= self.radius, inside, outside)

    def halo_density_on(self, grid):
        """Sample the spherical profile on a meridional grid."""
        rad = np.hypot(grid.r_nodes[:, None], grid.z_nodes[None, :])
        return HaloDensity(grid, self.density_at(rad))


@dataclass
class SteadyStateFlat:
    """Decoupled polytropic disk: axisymmetric planar steady state."""

    kt: float
    mass: float
    norm: float
    e0: float
    lam: float
    radius: float
    grid: RadialGrid = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    ekin: float = 0.0
    epot: float = 0.0
    sweeps: int = 0

    def density_at(self, r):
        return np.interp(
            np.asarray(r, dtype=float), self.grid.nodes, self.sigma, right=0.0
        )

    def disk_density_on(self, grid):
        return DiskDensity(grid, self.density_at(grid.nodes))


# unit-amplitude radial solves and their integral invariants, keyed by k
_UNIT_HALO_CACHE = {}


def _unit_halo_solve(k):
    cached = _UNIT_HALO_CACHE.get(k)
    if cached is not None:
        return cached
    n = k + 1.5
    sol = emden_fowler_solve(n, c=1.0, y0=1.0)
    c_d, c_k, c_c = moment_coefficients(k, "halo")
    lam_unit = (4.0 * np.pi * c_d) ** (1.0 / k)
    rg = radial_grid(sol.radius, n=4096, measure="ball", grading=2.0)
    y = np.maximum(sol(rg.nodes), 0.0)
    mass = sol.mass
    e0 = -mass / sol.radius
    u = e0 - y
    rho = y ** n / (4.0 * np.pi)
    ekin = integrate(c_k * lam_unit ** -k * y ** (n + 1.0), rg)
    epot = 0.5 * integrate(u * rho, rg)
    q_cas = integrate(c_c * lam_unit ** -(k + 1.0) * y ** (n + 1.0), rg)
    norm = q_cas ** (k / (k + 1.0))
    unit = {
        "sol": sol,
        "lam": lam_unit,
        "mass": mass,
        "norm": norm,
        "e0": e0,
        "ekin": ekin,
        "epot": epot,
    }
    _UNIT_HALO_CACHE[k] = unit
    return unit


def rescale_exponents_3d(k):
    """Log-linear response of (mass, norm) to the rescaling (alpha, beta).

    f -> alpha^2 beta f(alpha x, beta v) multiplies the mass by
    alpha^-1 beta^-2 and the Casimir norm by
    alpha^((2-k)/(k+1)) beta^((1-2k)/(k+1)); rows in that order.
    """
    return np.array(
        [
            [-1.0, -2.0],
            [(2.0 - k) / (k + 1.0), (1.0 - 2.0 * k) / (k + 1.0)],
        ]
    )


def rescale_exponents_flat(kt):
    """Same for the planar rescaling f -> mu f(mu x, nu v)."""
    return np.array(
        [
            [-1.0, -2.0],
            [(1.0 - kt) / (kt + 1.0), -2.0 * kt / (kt + 1.0)],
        ]
    )


def solve_decoupled_3d(k, mass, norm, n_profile=4096):
    """Polytropic halo with prescribed mass and Casimir norm.

    Solves the radial equation once per exponent in unit form, maps the
    constraint targets through the two-parameter rescaling group, and
    re-integrates the radial equation at the mapped multipliers so the
    returned profile is a genuine solve at the target scale.
    """
    if not 0.0 < k < 2.5:
        raise InfeasibleComponentError(
            "halo", "compact steady states require 0 < k < 5/2"
        )
    if mass <= 0.0 or norm <= 0.0:
        raise ValueError("mass and norm must be positive")
    unit = _unit_halo_solve(k)
    targets = np.log([mass / unit["mass"], norm / unit["norm"]])
    log_ab = np.linalg.solve(rescale_exponents_3d(k), targets)
    alpha, beta = np.exp(log_ab)

    e0 = beta ** -2.0 * unit["e0"]
    lam = unit["lam"] * (alpha ** 2.0 * beta ** (2.0 * k + 1.0)) ** (-1.0 / k)
    n = k + 1.5
    c_d, c_k, c_c = moment_coefficients(k, "halo")
    c_ode = 4.0 * np.pi * c_d * lam ** -k
    gap0 = beta ** -2.0  # central gap of the rescaled state
    sol = emden_fowler_solve(n, c=c_ode, y0=gap0)

    rg = radial_grid(sol.radius, n=n_profile, measure="ball", grading=2.0)
    y = np.maximum(sol(rg.nodes), 0.0)
    y[-1] = 0.0
    m_out = sol.mass
    e0_out = -m_out / sol.radius
    rho = c_d * lam ** -k * y ** n
    u = e0_out - y
    ekin = integrate(c_k * lam ** -k * y ** (n + 1.0), rg)
    epot = 0.5 * integrate(u * rho, rg)
    q_cas = integrate(c_c * lam ** -(k + 1.0) * y ** (n + 1.0), rg)
    return SteadyState3D(
        k=k,
        mass=m_out,
        norm=q_cas ** (k / (k + 1.0)),
        e0=e0_out,
        lam=lam,
        radius=sol.radius,
        r=rg.nodes,
        rho=rho,
        u=u,
        ekin=ekin,
        epot=epot,
    )


def _flat_cutoff_for_mass(u_plane, lam, kt, mass, grid):
    """Cutoff energy whose induced planar density carries the target mass.

    The available mass is increasing in e0, so bisection on
    [min u, 0] converges unconditionally; a fixed iteration count keeps
    the result deterministic.
    """
    c_d = moment_coefficients(kt, "disk")[0]

    def mass_at(e0):
        gap = np.maximum(e0 - u_plane, 0.0)
        return integrate(c_d * lam ** -kt * gap ** (kt + 1.0), grid)

    lo = float(np.min(u_plane))
    hi = 0.0
    if mass_at(hi) < mass:
        return None
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mass_at(mid) < mass:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


_UNIT_FLAT_CACHE = {}


def _unit_flat_solve(kt):
    """Cached unit-constraint disk, used to scale initial guesses."""
    if kt not in _UNIT_FLAT_CACHE:
        _UNIT_FLAT_CACHE[kt] = solve_decoupled_flat(kt, 1.0, 1.0)
    return _UNIT_FLAT_CACHE[kt]


def solve_decoupled_flat(
    kt,
    mass,
    norm,
    n_nodes=512,
    damping=0.5,
    tol=1e-8,
    max_sweeps=400,
    extent=None,
):
    """Polytropic disk with prescribed mass and Casimir norm.

    Damped fixed-point iteration on the surface density: each sweep
    recomputes the plane potential, bisects the cutoff energy so the
    mass constraint holds at the current amplitude scale, then nudges
    the scale toward the Casimir target.  The grid extent follows the
    support (re-solving on a fresh grid when the support leaves a
    comfortable window), so callers need no prior size estimate.  Away
    from unit constraints the starting profile, amplitude scale, and
    extent come from the exact rescaling of a cached unit solution,
    which keeps extreme constraint values cheap; the iteration itself
    still enforces the constraints directly on its own grid.
    """
    if not 0.0 < kt < 1.0:
        raise InfeasibleComponentError(
            "disk", "compact steady states require 0 < kt < 1"
        )
    if mass <= 0.0 or norm <= 0.0:
        raise ValueError("mass and norm must be positive")
    c_d, c_k, c_c = moment_coefficients(kt, "disk")
    q_target = norm ** ((kt + 1.0) / kt)

    lam = None
    sigma = None
    warm = None
    if extent is None:
        if mass == 1.0 and norm == 1.0:
            extent = 1.3
        else:
            unit = _unit_flat_solve(kt)
            mu = mass ** -kt * norm ** (kt + 1.0)
            nu = mass ** (0.5 * (kt - 1.0)) * norm ** (-0.5 * (kt + 1.0))
            extent = 1.25 * unit.radius / mu
            lam = unit.lam * nu ** -2.0 * mu ** (-1.0 / kt)
            warm = (unit, mu, nu)
    total_sweeps = 0
    for regrid in range(8):
        grid = radial_grid(extent, n=n_nodes, measure="disk")
        if sigma is None and warm is not None:
            unit, mu, nu = warm
            sigma = mu * nu ** -2.0 * unit.density_at(mu * grid.nodes)
            sigma *= mass / max(integrate(sigma, grid), 1e-300)
        elif sigma is None:
            sigma = np.where(grid.nodes <= 1.0, mass / np.pi, 0.0)
        else:
            sigma = np.interp(grid.nodes, prev_nodes, sigma, right=0.0)
            sigma *= mass / max(integrate(sigma, grid), 1e-300)
        if lam is None:
            lam = 1.0

        converged = False
        for sweep in range(max_sweeps):
            total_sweeps += 1
            u_plane = disk_potential(sigma, grid)
            e0 = _flat_cutoff_for_mass(u_plane, lam, kt, mass, grid)
            if e0 is None:
                # amplitude too small to reach the mass: relax the scale
                lam *= 0.5
                continue
            gap = np.maximum(e0 - u_plane, 0.0)
            sigma_cand = c_d * lam ** -kt * gap ** (kt + 1.0)
            q_now = integrate(c_c * lam ** -(kt + 1.0) * gap ** (kt + 2.0), grid)
            lam_next = lam * (q_now / q_target) ** (1.0 / (kt + 1.0))
            step = np.max(np.abs(sigma_cand - sigma)) / max(np.max(sigma_cand), 1e-300)
            sigma = (1.0 - damping) * sigma + damping * sigma_cand
            lam_rel = abs(lam_next - lam) / lam
            lam = lam_next
            if step < tol and lam_rel < tol:
                converged = True
                break
        if not converged:
            raise ConvergenceError(
                "flat solver did not converge",
                diagnostics={"sweeps": total_sweeps, "step": step, "extent": extent},
            )
        # support radius from the gap's zero crossing
        gap_nodes = e0 - u_plane
        pos = gap_nodes > 0.0
        if pos[-1]:
            # support touches the boundary: enlarge and re-solve
            prev_nodes = grid.nodes
            extent *= 1.4
            continue
        edge = int(np.nonzero(pos)[0][-1])
        g0, g1 = gap_nodes[edge], gap_nodes[edge + 1]
        radius = grid.nodes[edge] + (grid.nodes[edge + 1] - grid.nodes[edge]) * (
            g0 / (g0 - g1)
        )
        if radius < 0.55 * extent or radius > 0.92 * extent:
            prev_nodes = grid.nodes
            extent = 1.25 * radius
            continue
        break
    else:
        raise ConvergenceError(
            "flat solver grid adaptation did not settle",
            diagnostics={"extent": extent, "radius": radius},
        )

    sigma = np.where(gap_nodes > 0.0, sigma, 0.0)
    ekin = integrate(c_k * lam ** -kt * gap ** (kt + 2.0), grid)
    epot = 0.5 * integrate(u_plane * sigma, grid)
    q_now = integrate(c_c * lam ** -(kt + 1.0) * gap ** (kt + 2.0), grid)
    return SteadyStateFlat(
        kt=kt,
        mass=integrate(sigma, grid),
        norm=q_now ** (kt / (kt + 1.0)),
        e0=e0,
        lam=lam,
        radius=radius,
        grid=grid,
        sigma=sigma,
        u=u_plane,
        ekin=ekin,
        epot=epot,
        sweeps=total_sweeps,
    )
