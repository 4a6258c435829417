"""Reference bodies shared by test modules.

Closed-form comparison densities: the uniform ball realized with
cell-averaged values on a meridional grid (plain nodal sampling of the
indicator would alias the curved boundary at first order), and the
uniform disk realized exactly on a radial grid ending at its edge.
"""

import numpy as np

from diskhalo.potentials import DiskDensity, HaloDensity
from diskhalo.quadrature import radial_grid


def antialiased_ball(grid, radius=1.0, sub=32):
    """Cell-averaged indicator of the ball r^2 + z^2 <= radius^2."""
    re = grid.r_cell_edges()
    ze = grid.z_cell_edges()
    vals = np.zeros(grid.shape)
    for i in range(grid.shape[0]):
        ra, rb = re[i], re[i + 1]
        for j in range(grid.shape[1]):
            za, zb = ze[j], ze[j + 1]
            if np.hypot(rb, zb) <= radius:
                vals[i, j] = 1.0
            elif np.hypot(ra, za) >= radius:
                vals[i, j] = 0.0
            else:
                rr = np.linspace(ra, rb, sub + 1)
                zz = np.linspace(za, zb, sub + 1)
                rm = 0.5 * (rr[:-1] + rr[1:])
                zm = 0.5 * (zz[:-1] + zz[1:])
                inside = (rm[:, None] ** 2 + zm[None, :] ** 2) <= radius ** 2
                wr = rm[:, None] * np.ones((1, sub))
                vals[i, j] = np.sum(inside * wr) / np.sum(wr)
    return HaloDensity(grid, vals)


def unit_disk(n=384, radius=1.0, sigma=1.0):
    """Uniform disk sampled exactly: grid ends at the disk edge."""
    dg = radial_grid(radius, n=n, measure="disk")
    return DiskDensity(dg, np.full(n, float(sigma)))
