"""Spray coefficients and RK4 geodesic integration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import jet as J
from .metric import f2_jet


def spray_jet(F2, ys):
    """Jet of G^i = (1/4) g^{il} (y^k d2F2/dx^k dy^l - dF2/dx^l).

    ``F2`` is a jet of F^2 and ``ys`` the seeded y-variable jets.
    """
    g = 0.5 * J.grad(J.grad(F2, "y"), "y")
    ginv = J.inv(g)
    Fx = J.grad(F2, "x")
    Fxy = J.grad(Fx, "y")
    w = J.einsum("...kl,...k->...l", Fxy, J.stack(ys, -1)) - Fx
    return 0.25 * J.einsum("...il,...l->...i", ginv, w)


def spray(spec, x, y):
    """G^i(x, y) as an array (..., n)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    if spec.x_free:
        return np.zeros(y.shape)
    F2, _, ys = f2_jet(spec, x, y, 1, 2, 3)
    return spray_jet(F2, ys).value


@dataclass(frozen=True)
class GeodesicPath:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    exited: np.ndarray       # True where the path left the domain
    steps_taken: np.ndarray  # number of valid steps per path


def geodesic(spec, x0, y0, T, steps, inside=None):
    """Classical RK4 for (x, y)' = (y, -2G(x, y)); batched over leading axes.

    Integration of a path stops (and ``exited`` is set) as soon as a stage
    leaves the metric domain or the optional ``inside(x)`` predicate.
    Entries after the exit are NaN.
    """
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)
    x0, y0 = np.broadcast_arrays(x0, y0)
    if np.any(np.linalg.norm(y0, axis=-1) == 0):
        raise ValueError("geodesic needs a nonzero initial velocity")
    shape = x0.shape[:-1]
    n = x0.shape[-1]
    xf = x0.reshape(-1, n).copy()
    yf = y0.reshape(-1, n).copy()
    m = xf.shape[0]
    dt = T / steps
    X = np.full((steps + 1, m, n), np.nan)
    Y = np.full((steps + 1, m, n), np.nan)
    X[0], Y[0] = xf, yf
    alive = np.ones(m, dtype=bool)
    taken = np.zeros(m, dtype=int)

    def ok(x):
        good = spec.in_domain(x) & np.all(np.isfinite(x), axis=-1)
        if inside is not None:
            good &= inside(x)
        return good

    alive &= ok(xf)
    for s in range(steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        x, y = xf[idx], yf[idx]
        good = np.ones(idx.size, dtype=bool)
        k1x, k1y = y, -2.0 * _spray_safe(spec, x, y, good)
        x2 = x + 0.5 * dt * k1x
        good &= ok(x2)
        k2x, k2y = y + 0.5 * dt * k1y, -2.0 * _spray_safe(spec, x2, y + 0.5 * dt * k1y, good)
        x3 = x + 0.5 * dt * k2x
        good &= ok(x3)
        k3x, k3y = y + 0.5 * dt * k2y, -2.0 * _spray_safe(spec, x3, y + 0.5 * dt * k2y, good)
        x4 = x + dt * k3x
        good &= ok(x4)
        k4x, k4y = y + dt * k3y, -2.0 * _spray_safe(spec, x4, y + dt * k3y, good)
        xn = x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        yn = y + dt / 6 * (k1y + 2 * k2y + 2 * k3y + k4y)
        good &= ok(xn) & np.all(np.isfinite(yn), axis=-1)
        gi = idx[good]
        xf[gi], yf[gi] = xn[good], yn[good]
        X[s + 1, gi], Y[s + 1, gi] = xn[good], yn[good]
        taken[gi] += 1
        alive[idx[~good]] = False
    t = np.linspace(0.0, T, steps + 1)
    X = np.moveaxis(X, 0, -2).reshape(shape + (steps + 1, n))
    Y = np.moveaxis(Y, 0, -2).reshape(shape + (steps + 1, n))
    return GeodesicPath(t=t, x=X, y=Y, exited=(taken < steps).reshape(shape),
                        steps_taken=taken.reshape(shape))


def _spray_safe(spec, x, y, good):
    out = np.zeros_like(y)
    if np.any(good):
        out[good] = spray(spec, x[good], y[good])
    return out


def rk4_step(spec, x, y, dt):
    """One RK4 step for all rows (no domain handling)."""
    k1x, k1y = y, -2.0 * spray(spec, x, y)
    k2x, k2y = y + 0.5 * dt * k1y, -2.0 * spray(spec, x + 0.5 * dt * k1x, y + 0.5 * dt * k1y)
    k3x, k3y = y + 0.5 * dt * k2y, -2.0 * spray(spec, x + 0.5 * dt * k2x, y + 0.5 * dt * k2y)
    k4x, k4y = y + dt * k3y, -2.0 * spray(spec, x + dt * k3x, y + dt * k3y)
    return (x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x),
            y + dt / 6 * (k1y + 2 * k2y + 2 * k3y + k4y))
