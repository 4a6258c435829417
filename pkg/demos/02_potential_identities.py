"""Closed-form checks of the interaction bilinear form.

Builds a uniform unit ball on a meridional grid and a uniform unit
disk on a radial grid, then compares the computed pairings against
exact values: the ball self product 16 pi^2 / 15, the disk self
product 8 pi / 3, and the mixed interaction energy -5 pi^2 / 3.  The
mixed energy is evaluated along both integration orders, which must
agree, and a handful of random density pairs demonstrate the
Cauchy-Schwarz inequality of the pairing.
"""

import numpy as np

from diskhalo import (
    DiskDensity,
    HaloDensity,
    meridional_grid,
    mixed_energy_both_ways,
    pot_inner,
    radial_grid,
)


def uniform_ball(grid, radius=1.0, sub=16):
    """Cell-averaged indicator of a ball, sampled sub^2 per cell."""
    r, z = grid.r_nodes, grid.z_nodes
    r_edges = np.concatenate([[0.0], 0.5 * (r[1:] + r[:-1]), [r[-1]]])
    z_edges = np.concatenate([[0.0], 0.5 * (z[1:] + z[:-1]), [z[-1]]])
    values = np.zeros((r.size, z.size))
    offsets = (np.arange(sub) + 0.5) / sub
    for i in range(r.size):
        rs = r_edges[i] + offsets * (r_edges[i + 1] - r_edges[i])
        for j in range(z.size):
            zs = z_edges[j] + offsets * (z_edges[j + 1] - z_edges[j])
            inside = rs[:, None] ** 2 + zs[None, :] ** 2 <= radius**2
            values[i, j] = inside.mean()
    return HaloDensity(grid, values)


def uniform_disk(grid, radius=1.0):
    """Indicator of a disk with the rim cell set to its area fraction."""
    r = grid.nodes
    edges = np.concatenate([[0.0], 0.5 * (r[1:] + r[:-1]), [r[-1]]])
    inner, outer = edges[:-1], edges[1:]
    covered = np.clip(radius**2 - inner**2, 0.0, outer**2 - inner**2)
    return DiskDensity(grid, covered / (outer**2 - inner**2))


def main():
    mgrid = meridional_grid(1.6, 1.6, n_r=96, n_z=96)
    dgrid = radial_grid(1.6, n=256)
    ball = uniform_ball(mgrid)
    disk = uniform_disk(dgrid)

    ball_self = pot_inner(ball, ball)
    disk_self = pot_inner(disk, disk)
    print("self pairings of uniform unit bodies")
    print(f"  ball  computed {ball_self:.6f}   exact {16 * np.pi**2 / 15:.6f}")
    print(f"  disk  computed {disk_self:.6f}   exact {8 * np.pi / 3:.6f}")

    via_disk, via_ball = mixed_energy_both_ways(ball, disk)
    exact = -5 * np.pi**2 / 3
    print("mixed interaction energy, two integration orders")
    print(f"  integrate disk potential against ball  {via_disk:.6f}")
    print(f"  integrate ball potential against disk  {via_ball:.6f}")
    print(f"  exact closed form                      {exact:.6f}")
    print(f"  route disagreement {abs(via_disk - via_ball) / abs(exact):.2e} relative")

    rng = np.random.default_rng(7)
    worst = np.inf
    for _ in range(20):
        a = HaloDensity(mgrid, rng.random(ball.values.shape))
        b = DiskDensity(dgrid, rng.random(disk.values.size))
        cross = abs(pot_inner(a, b))
        bound = np.sqrt(pot_inner(a, a) * pot_inner(b, b))
        worst = min(worst, 1.0 - cross / bound)
    print("Cauchy-Schwarz slack 1 - |<a,b>| / (||a|| ||b||) over 20 random pairs")
    print(f"  minimum slack {worst:.3e} (must not be negative)")


if __name__ == "__main__":
    main()
