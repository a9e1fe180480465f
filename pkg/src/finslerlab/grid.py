"""Uniform 2-D grids carrying scalar or vector fields."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class FieldGrid:
    """Node values on a uniform grid with spacing h.

    ``domain`` is 'torus' (periodic, nodes lo + i*h for i < k), 'ball'
    (nodes of the bounding box, ``mask`` marks the ball) or 'box'.
    """

    values: np.ndarray
    lo: tuple
    h: float
    domain: str = "box"
    t: float = 0.0
    mask: np.ndarray | None = None
    center: tuple | None = None
    radius: float | None = None
    boundary: str | None = None

    @property
    def shape(self):
        return self.values.shape[:2]

    @property
    def axes(self):
        k1, k2 = self.shape
        return (self.lo[0] + self.h * np.arange(k1), self.lo[1] + self.h * np.arange(k2))

    @property
    def points(self):
        a, b = self.axes
        X1, X2 = np.meshgrid(a, b, indexing="ij")
        return np.stack([X1, X2], -1)

    @property
    def periods(self):
        if self.domain != "torus":
            return None
        return (self.shape[0] * self.h, self.shape[1] * self.h)

    def active(self):
        return np.ones(self.shape, bool) if self.mask is None else self.mask

    def with_values(self, values, t=None):
        return replace(self, values=values, t=self.t if t is None else t)

    def integral(self, weight=None):
        """Riemann sum of values (times weight) over the active cells."""
        v = self.values if weight is None else self.values * weight
        return float(np.sum(v[self.active()]) * self.h ** 2)

    def write_csv(self, path, name="u"):
        pts = self.points
        act = self.active()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x1", "x2", name])
            for (i, j) in zip(*np.nonzero(act)):
                w.writerow([f"{pts[i, j, 0]:.10g}", f"{pts[i, j, 1]:.10g}",
                            f"{self.values[i, j]:.12g}"])


def box_grid(lo, hi, k):
    """Nodes lo..hi inclusive, k per axis (equal spacing required)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    h = (hi - lo) / (k - 1)
    if not np.isclose(h[0], h[1]):
        raise ValueError("grid spacing must be equal along both axes")
    return FieldGrid(values=np.zeros((k, k)), lo=tuple(lo), h=float(h[0]))


def torus_grid(periods, k, lo=(0.0, 0.0)):
    L = np.asarray(periods, dtype=float)
    if not np.isclose(L[0], L[1]):
        raise ValueError("torus periods must be equal")
    return FieldGrid(values=np.zeros((k, k)), lo=tuple(lo), h=float(L[0] / k), domain="torus")


def ball_grid(center, radius, k, boundary="neumann"):
    """k x k nodes covering the ball's bounding box; mask marks the ball."""
    c = np.asarray(center, dtype=float)
    g = box_grid(c - radius, c + radius, k)
    d = np.linalg.norm(g.points - c, axis=-1)
    return replace(g, domain="ball", mask=d <= radius, center=tuple(c),
                   radius=float(radius), boundary=boundary)
