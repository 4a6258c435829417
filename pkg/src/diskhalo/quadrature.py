"""Grids, weighted quadrature, Lp norms, and the complete elliptic integral.

Weights are built by integrating the measure exactly against piecewise-linear
hat functions on the node set ("product trapezoid").  Integrating a constant
therefore reproduces the measure of the domain to machine precision on any
node layout, and smooth integrands converge at second order.
"""

from dataclasses import dataclass, field

import numpy as np


_MEASURES = ("line", "disk", "ball")


def graded_points(n, power=2.0):
    """n points in [0, 1], clustered at both endpoints for power > 1.

    Uses the rational map u^p / (u^p + (1-u)^p), which is the identity for
    p = 1 and pushes nodes toward 0 and 1 symmetrically as p grows.
    """
    if n < 2:
        raise ValueError("need at least 2 nodes")
    u = np.linspace(0.0, 1.0, n)
    if power == 1.0:
        return u
    up = u ** power
    um = (1.0 - u) ** power
    return up / (up + um)


def _hat_weights(nodes, measure):
    """Quadrature weights for the given radial measure on arbitrary nodes.

    Each cell [a, b] contributes the exact integrals of the two linear hat
    functions against the measure density:

        line  m(r) = 1
        disk  m(r) = 2 pi r
        ball  m(r) = 4 pi r^2
    """
    a = nodes[:-1]
    h = np.diff(nodes)
    if measure == "line":
        left = 0.5 * h
        right = 0.5 * h
    elif measure == "disk":
        left = np.pi * h * (3.0 * a + h) / 3.0
        right = np.pi * h * (3.0 * a + 2.0 * h) / 3.0
    elif measure == "ball":
        # expanded in h to avoid cancellation between large powers of b
        left = np.pi * h * (6.0 * a ** 2 + 4.0 * a * h + h ** 2) / 3.0
        right = np.pi * h * (6.0 * a ** 2 + 8.0 * a * h + 3.0 * h ** 2) / 3.0
    else:
        raise ValueError(f"unknown measure {measure!r}; expected one of {_MEASURES}")
    w = np.zeros_like(nodes)
    w[:-1] += left
    w[1:] += right
    return w


@dataclass
class RadialGrid:
    """Radial quadrature grid: strictly increasing nodes starting at 0.

    measure selects the weight density: "disk" (2 pi r dr), "ball"
    (4 pi r^2 dr), or "line" (dr).
    """

    nodes: np.ndarray
    weights: np.ndarray = None
    measure: str = "disk"

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.nodes.ndim != 1 or self.nodes.size < 2:
            raise ValueError("nodes must be a 1d array with at least 2 entries")
        if self.nodes[0] != 0.0 or np.any(np.diff(self.nodes) <= 0.0):
            raise ValueError("nodes must start at 0 and increase strictly")
        if self.measure not in _MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}")
        if self.weights is None:
            self.weights = _hat_weights(self.nodes, self.measure)
        else:
            self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights < 0.0):
            raise ValueError("weights must be nonnegative")

    @property
    def rmax(self):
        return float(self.nodes[-1])

    @property
    def n(self):
        return self.nodes.size

    def spacing(self):
        """Local node spacing (half-cell widths summed), same length as nodes."""
        d = np.diff(self.nodes)
        s = np.empty_like(self.nodes)
        s[0] = d[0]
        s[-1] = d[-1]
        s[1:-1] = 0.5 * (d[:-1] + d[1:])
        return s

    def cell_edges(self):
        """Midpoint cell edges: edges[i] <= nodes[i] < edges[i+1]."""
        mid = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        return np.concatenate(([self.nodes[0]], mid, [self.nodes[-1]]))

    def scaled(self, factor):
        """Same node layout dilated by factor, with fresh exact weights."""
        if factor <= 0.0:
            raise ValueError("factor must be positive")
        return RadialGrid(nodes=self.nodes * factor, measure=self.measure)


def radial_grid(rmax, n=256, measure="disk", grading=2.0):
    """Build a radial grid on [0, rmax] with power-law clustered nodes."""
    if rmax <= 0.0:
        raise ValueError("rmax must be positive")
    nodes = rmax * graded_points(n, grading)
    return RadialGrid(nodes=nodes, weights=_hat_weights(nodes, measure), measure=measure)


@dataclass
class MeridionalGrid:
    """Tensor grid on the meridional half-plane (R >= 0, z >= 0).

    Fields stored on it represent even functions of z, so volume weights
    carry a factor 2 for the mirrored half-space.  z nodes are uniform; the
    halo-potential kernel cache indexes z separations by integer offset and
    relies on that.
    """

    r_nodes: np.ndarray
    z_nodes: np.ndarray
    r_weights: np.ndarray = field(repr=False)
    z_weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.r_nodes = np.asarray(self.r_nodes, dtype=float)
        self.z_nodes = np.asarray(self.z_nodes, dtype=float)
        dz = np.diff(self.z_nodes)
        if not np.allclose(dz, dz[0], rtol=1e-12, atol=0.0):
            raise ValueError("z nodes must be uniformly spaced")
        if self.z_nodes[0] != 0.0:
            raise ValueError("z nodes must start at 0")

    @property
    def shape(self):
        return self.r_nodes.size, self.z_nodes.size

    @property
    def dz(self):
        return float(self.z_nodes[1] - self.z_nodes[0])

    @property
    def r_max(self):
        return float(self.r_nodes[-1])

    @property
    def z_max(self):
        return float(self.z_nodes[-1])

    @property
    def weights(self):
        """Full-space volume weights, shape (n_R, n_z)."""
        return self.r_weights[:, None] * (2.0 * self.z_weights[None, :])

    def r_spacing(self):
        d = np.diff(self.r_nodes)
        s = np.empty_like(self.r_nodes)
        s[0] = d[0]
        s[-1] = d[-1]
        s[1:-1] = 0.5 * (d[:-1] + d[1:])
        return s

    def r_cell_edges(self):
        mid = 0.5 * (self.r_nodes[:-1] + self.r_nodes[1:])
        return np.concatenate(([self.r_nodes[0]], mid, [self.r_nodes[-1]]))

    def z_cell_edges(self):
        """Bin edges in |z|, length n_z + 1; node 0 owns [0, dz/2)."""
        h = self.dz
        inner = self.z_nodes[:-1] + 0.5 * h
        return np.concatenate(([0.0], inner, [self.z_nodes[-1]]))

    def scaled(self, factor):
        """Same node layout dilated by factor, with fresh exact weights."""
        if factor <= 0.0:
            raise ValueError("factor must be positive")
        r = self.r_nodes * factor
        z = self.z_nodes * factor
        return MeridionalGrid(
            r_nodes=r,
            z_nodes=z,
            r_weights=_hat_weights(r, "disk"),
            z_weights=_hat_weights(z, "line"),
        )


def meridional_grid(r_max, z_max, n_r=256, n_z=256, grading=2.0):
    """Build a meridional grid: graded R nodes, uniform z nodes."""
    if r_max <= 0.0 or z_max <= 0.0:
        raise ValueError("extents must be positive")
    r_nodes = r_max * graded_points(n_r, grading)
    z_nodes = np.linspace(0.0, z_max, n_z)
    return MeridionalGrid(
        r_nodes=r_nodes,
        z_nodes=z_nodes,
        r_weights=_hat_weights(r_nodes, "disk"),
        z_weights=_hat_weights(z_nodes, "line"),
    )


def elliptic_k(m):
    """Complete elliptic integral K(m), squared-modulus convention.

    K(m) = int_0^{pi/2} dtheta / sqrt(1 - m sin^2 theta), computed by the
    arithmetic-geometric mean iteration until successive means agree to
    1e-15 relatively.  Accepts scalars or arrays with 0 <= m < 1.
    """
    m_arr = np.asarray(m, dtype=float)
    if np.any(m_arr < 0.0) or np.any(m_arr >= 1.0):
        raise ValueError("elliptic_k requires 0 <= m < 1")
    a = np.ones_like(m_arr)
    b = np.sqrt(1.0 - m_arr)
    for _ in range(60):
        live = np.abs(a - b) > 1e-15 * a
        if not np.any(live):
            break
        an = np.where(live, 0.5 * (a + b), a)
        b = np.where(live, np.sqrt(a * b), b)
        a = an
    out = np.pi / (2.0 * a)
    return float(out) if np.isscalar(m) or m_arr.ndim == 0 else out


def integrate(field, grid):
    """Weighted sum of field values over the grid's measure.

    Summation uses numpy's fixed-order pairwise reduction, so results are
    identical regardless of thread count.
    """
    field = np.asarray(field, dtype=float)
    if isinstance(grid, RadialGrid):
        if field.shape != grid.nodes.shape:
            raise ValueError(f"field shape {field.shape} does not match grid ({grid.n},)")
        return float(np.sum(field * grid.weights))
    if isinstance(grid, MeridionalGrid):
        if field.shape != grid.shape:
            raise ValueError(f"field shape {field.shape} does not match grid {grid.shape}")
        return float(np.sum(field * grid.weights))
    raise TypeError(f"unsupported grid type {type(grid).__name__}")


def lp_norm(field, p, grid):
    """(int |field|^p dmu)^(1/p) with the grid's measure."""
    if p < 1.0:
        raise ValueError("lp_norm requires p >= 1")
    return integrate(np.abs(np.asarray(field, dtype=float)) ** p, grid) ** (1.0 / p)
