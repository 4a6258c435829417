"""Decoupled equilibria and their radius scaling laws.

Solves the spherical halo and the razor-thin disk separately, checks
the virial balance of each, then sweeps the constraint values and fits
the support radius against mass and Casimir bounds on a log-log grid.
For exponents k = 1 and kt = 1/2 the fitted slopes should land on
(1/3, -4/3) for the halo and (1/2, -3/2) for the disk.
"""

import numpy as np

from diskhalo import solve_decoupled_3d, solve_decoupled_flat


def fit_slopes(masses, norms, radii):
    logs = np.log(np.array(radii))
    design = np.column_stack(
        [np.ones_like(logs), np.log(masses), np.log(norms)]
    )
    coeff, *_ = np.linalg.lstsq(design, logs, rcond=None)
    return coeff[1], coeff[2]


def main():
    halo = solve_decoupled_3d(k=1.0, mass=1.0, norm=1.0)
    print("spherical halo, k=1, M=N=1")
    print(f"  radius      {halo.radius:.6f}")
    print(f"  cutoff e0   {halo.e0:.6f}   amplitude lam {halo.lam:.6f}")
    print(f"  virial defect |2T+W|/|W| = {abs(2 * halo.ekin + halo.epot) / abs(halo.epot):.2e}")

    disk = solve_decoupled_flat(kt=0.5, mass=1.0, norm=1.0)
    print("flat disk, kt=1/2, M=N=1")
    print(f"  radius      {disk.radius:.6f}")
    print(f"  cutoff e0   {disk.e0:.6f}   amplitude lam {disk.lam:.6f}")
    print(f"  virial defect |2T+W|/|W| = {abs(2 * disk.ekin + disk.epot) / abs(disk.epot):.2e}")

    values = [0.5, 1.0, 2.0]
    combos = [(m, n) for m in values for n in values]

    radii = [solve_decoupled_3d(1.0, m, n).radius for m, n in combos]
    sm, sn = fit_slopes([c[0] for c in combos], [c[1] for c in combos], radii)
    print("halo radius law R ~ M^a N^b over a 3x3 sweep")
    print(f"  fitted a = {sm:+.6f}   target {1 / 3:+.6f}")
    print(f"  fitted b = {sn:+.6f}   target {-4 / 3:+.6f}")

    radii = [solve_decoupled_flat(0.5, m, n).radius for m, n in combos]
    sm, sn = fit_slopes([c[0] for c in combos], [c[1] for c in combos], radii)
    print("disk radius law R ~ M^a N^b over the same sweep")
    print(f"  fitted a = {sm:+.6f}   target {0.5:+.6f}")
    print(f"  fitted b = {sn:+.6f}   target {-1.5:+.6f}")


if __name__ == "__main__":
    main()
