"""Positive solutions of the Finslerian heat/Schrodinger equation and the
Li-Yau quantity.

For the Euclidean heat kernel the quantity F^2(grad f) - f_t equals n/(2t)
exactly, so the estimate with beta = 1 is sharp.  On a Randers torus with a
potential the solver output is checked against the N-dimensional estimate.
"""

import numpy as np

from finslerlab import (EstimateParams, PotentialSpec, SolverConfig, box_grid, check_compact_N,
                        euclidean, lebesgue, li_yau_H, randers, solve_schrodinger, torus_grid)


def heat_kernel(x, t):
    return np.exp(-np.sum(x ** 2, axis=-1) / (4 * t)) / (4 * np.pi * t)


g = box_grid((-4, -4), (4, 4), 256)
print("Euclidean heat kernel, beta = 1:")
for t in (0.2, 0.5, 1.0):
    snaps = [g.with_values(heat_kernel(g.points, s), t=s) for s in (t - 1e-4, t, t + 1e-4)]
    H = li_yau_H(euclidean(), snaps, beta=1.0).H[0].values / t
    print(f"  t={t:.1f}  max|F^2(grad f) - f_t - 1/t| = {np.nanmax(np.abs(H - 1 / t)):.2e}")

spec = randers(b=[0.3, 0.0])
q = PotentialSpec("0.1*sin(x1)")
gt = torus_grid((2 * np.pi, 2 * np.pi), 48)
X = gt.points
u0 = gt.with_values(1 + 0.5 * np.cos(X[..., 0]) * np.cos(X[..., 1]), t=0.0)
times = tuple(np.round(np.linspace(0.05, 1.05, 21), 10))
res = solve_schrodinger(spec, lebesgue(), u0, q, SolverConfig(t_end=1.05, snapshot_times=times))
# the potential exchanges mass, so the total changes with t
print(f"\nRanders torus: {res.steps} steps of dt={res.dt:.2e}, mass {res.mass[0]:.4f} -> "
      f"{res.mass[-1]:.4f}")
for beta in (1.5, 2.0):
    rep = check_compact_N(spec, lebesgue(), res.snapshots, EstimateParams(N=3, beta=beta), q=q,
                          ut=res.ut, t_window=(0.1, 1.0))
    print(rep.summary())
