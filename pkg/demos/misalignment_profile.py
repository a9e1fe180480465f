"""How far a Finsler metric is from Riemannian, point by point.

The misalignment is 1 exactly when the fundamental tensor does not depend on
the reference direction.  Constant Randers metrics have a closed form, and the
Funk metric of the disk blows up towards the boundary.
"""

import numpy as np

from finslerlab import euclidean, funk_disk, randers, misalignment_local


def show(name, spec, x):
    rep = misalignment_local(spec, np.asarray(x, dtype=float))
    print(f"{name:<22} x={tuple(x)}  alpha={rep.alpha:9.4f}  kappa={rep.kappa:8.4f}  "
          f"kappa*={rep.kappa_star:7.4f}  rho={rep.rho:7.4f}")
    return rep


show("euclidean", euclidean(), (0.0, 0.0))
for b in (0.1, 0.3, 0.5):
    rep = show(f"randers |b|={b}", randers(b=[b, 0.0]), (0.0, 0.0))
    print(f"{'':<22} closed form ((1+b)/(1-b))^2 = {((1 + b) / (1 - b)) ** 2:.4f}")

print("\nFunk disk along the x1 axis:")
funk = funk_disk()
for s in (0.0, 0.3, 0.5, 0.7, 0.9):
    show("funk", funk, (s, 0.0))
