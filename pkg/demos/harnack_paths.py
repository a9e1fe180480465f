"""Harnack inequality along action-minimizing paths.

In flat space with q = 0 the minimal action between (x1, t1) and (x2, t2) is
beta |x1 - x2|^2 / (4 (t2 - t1)); the graph search plus smoothing recovers it.
"""

import numpy as np

from finslerlab import (Ball, EstimateParams, PotentialSpec, SolverConfig, ball_grid, euclidean,
                        harnack_check, lebesgue, solve_schrodinger)
from finslerlab.estimates import random_pairs


def heat_kernel(x, t):
    return np.exp(-np.sum(x ** 2, axis=-1) / (4 * t)) / (4 * np.pi * t)


g = ball_grid((0, 0), 2.0, 41, boundary="dirichlet")
u0 = g.with_values(heat_kernel(g.points, 0.1), t=0.1)
times = tuple(np.round(np.linspace(0.1, 0.6, 26), 10))
res = solve_schrodinger(euclidean(), lebesgue(), u0, PotentialSpec("0"),
                        SolverConfig(t_end=0.5, snapshot_times=times, boundary_values=heat_kernel))
region = Ball((0.0, 0.0), 1.0)
pairs = random_pairs(res.snapshots, 10, np.random.default_rng(0), region=region, t_min=0.2)
params = EstimateParams(N=3, beta=2.0, R=1.0, K=0, gamma=0, theta=0, C3=0.0)
hr = harnack_check(euclidean(), res.snapshots, params, pairs, variant="noncompact", region=region)
print(hr.summary())
for ((x1, t1), (x2, t2)), Q in zip(pairs, hr.Q):
    closed = 2.0 * np.sum((x1 - x2) ** 2) / (4 * (t2 - t1))
    print(f"  |dx|={np.linalg.norm(x1 - x2):.3f} dt={t2 - t1:.2f}  Q={Q:.5f}  closed form={closed:.5f}")
