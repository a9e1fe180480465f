"""Laplacian of the distance function against the comparison bound.

On the Poincare disk the Laplacian of r is coth(r); the bound with N = 3,
alpha = 1, K = 1 is sqrt(2) coth(r / sqrt(2)).  On a Randers metric with a
bump-shaped drift every constant is measured and both reference-vector
policies are swept.
"""

import numpy as np

from finslerlab import (Ball, curvature_lower_bound, distance_field, k0_bound, lebesgue,
                        misalignment_region, poincare_disk, randers, riemannian_volume,
                        verify_comparison)

P = poincare_disk()
g = "4/(1-x1^2-x2^2)^2"
mu = riemannian_volume([[g, "0"], ["0", g]])
rep = verify_comparison(P, mu, [0, 0], Ball((0.0, 0.0), 0.8), 3, V_policy="gradient",
                        alpha=1.0, K=1.0, K0=0.0, k=121)
print(rep.summary())
for r0 in (0.5, 1.0, 2.0):
    k = np.argmin(np.abs(rep.r - r0))
    print(f"  r={rep.r[k]:.3f}  laplacian={rep.laplacian[k]:.4f}  coth(r)={1 / np.tanh(rep.r[k]):.4f}"
          f"  bound={rep.bound[k]:.4f}")

spec = randers(b=["0.2*exp(-(x1^2+x2^2))", "0"])
leb = lebesgue()
B = Ball((0.0, 0.0), 1.0)
field = distance_field(spec, leb, [0, 0], [-1, -1], [1, 1], 121, region=B)
alpha = misalignment_region(spec, B)
K0 = k0_bound(spec, leb, B.sample, 4096)
print(f"\nRanders bump: alpha={alpha:.4f} K0={K0:.4f}")
for mode in ("mixed", "flag", "infty_variant"):
    K = curvature_lower_bound(spec, leb, B, 3, mode).K
    for policy in ("gradient", "rotating"):
        rep = verify_comparison(spec, leb, [0, 0], B, 3, V_policy=policy, mode=mode,
                                alpha=alpha, K=K, K0=K0, field_=field)
        print(" ", rep.summary())
