"""Sampling regions: Euclidean balls and periodic boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Ball:
    center: tuple
    radius: float

    @property
    def n(self):
        return len(self.center)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.linalg.norm(x - np.asarray(self.center), axis=-1) <= self.radius * (1 + 1e-12)

    def sample(self, rng, m):
        """Uniform samples, with a quarter of them on the boundary sphere."""
        n = self.n
        d = rng.normal(size=(m, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = self.radius * rng.random(m) ** (1.0 / n)
        r[: m // 4] = self.radius
        return np.asarray(self.center) + r[:, None] * d

    def __call__(self, rng, m):
        return self.sample(rng, m)

    def project(self, x):
        c = np.asarray(self.center)
        v = np.asarray(x, dtype=float) - c
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        scale = np.minimum(1.0, self.radius / np.maximum(nv, 1e-300))
        return c + v * scale

    def grid(self, k):
        """Points of a k x k lattice inside the ball (n = 2)."""
        c = np.asarray(self.center)
        s = np.linspace(-self.radius, self.radius, k)
        X, Y = np.meshgrid(s, s, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], -1) + c
        return pts[self.contains(pts)]


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lo, hi] (used for tori as a fundamental domain)."""

    lo: tuple
    hi: tuple

    @property
    def n(self):
        return len(self.lo)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x >= np.asarray(self.lo)) & (x <= np.asarray(self.hi)), axis=-1)

    def sample(self, rng, m):
        return rng.uniform(self.lo, self.hi, size=(m, self.n))

    def __call__(self, rng, m):
        return self.sample(rng, m)

    def project(self, x):
        return np.clip(x, self.lo, self.hi)

    def grid(self, k):
        axes = [np.linspace(a, b, k) for a, b in zip(self.lo, self.hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], -1)


def region_from_config(section, n=2):
    sec = dict(section or {})
    allowed = {"type", "center", "radius", "lo", "hi"}
    unknown = set(sec) - allowed
    if unknown:
        raise ValueError(f"[region] unknown key(s): {', '.join(sorted(unknown))}")
    kind = sec.get("type", "ball").strip()
    if kind == "ball":
        center = _vec(sec.get("center", ",".join(["0"] * n)))
        if len(center) != n:
            raise ValueError("[region] center has the wrong dimension")
        return Ball(tuple(center), float(sec.get("radius", "0.5")))
    if kind in ("box", "torus"):
        return Box(tuple(_vec(sec["lo"])), tuple(_vec(sec["hi"])))
    raise ValueError(f"[region] unknown type {kind!r}")


def _vec(text):
    return [float(v) for v in str(text).replace(";", ",").split(",") if v.strip()]
