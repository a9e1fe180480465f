"""Forward distance fields, the Laplacian of the distance with a reference
vector field, weighted/mixed Ricci curvatures and the comparison check.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial import cKDTree

from .constants import misalignment_region
from .curvature import distortion_s, flag_data, k0_bound, _flag_from
from .geodesics import geodesic  # noqa: F401  (part of the public surface)
from .grid import FieldGrid, box_grid
from .metric import DomainError, ZeroVectorError, _g_only, unit_directions

__all__ = [
    "geodesic", "DistanceField", "distance_field", "nonlinear_laplacian_r", "ct",
    "ricci_family", "curvature_lower_bound", "ComparisonReport", "verify_comparison",
]


# the comparison function -----------------------------------------------------

def ct(c, r):
    """sqrt(c) cot(sqrt(c) r), 1/r or sqrt(-c) coth(sqrt(-c) r) by the sign of c."""
    c = float(c)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("ct needs r > 0")
    if c > 0:
        s = np.sqrt(c)
        if np.any(r >= np.pi / s):
            raise ValueError("ct(c, r) needs r < pi/sqrt(c) for c > 0")
        return s / np.tan(s * r)
    if c == 0:
        return 1.0 / r
    s = np.sqrt(-c)
    return s / np.tanh(s * r)


# distance fields -------------------------------------------------------------

@dataclass
class DistanceField:
    p: np.ndarray
    grid: FieldGrid            # r values (NaN where unreached)
    grad_r: np.ndarray         # (k1, k2, n) gradient vector field of r
    smooth_mask: np.ndarray
    method: str
    reached: np.ndarray
    region_mask: np.ndarray
    disagreement: float | None = None
    warning: bool = False

    @property
    def r(self):
        return self.grid.values

    @property
    def h(self):
        return self.grid.h


def _straight_length(spec, p, q, m=64):
    """F-length of the straight segment p -> q (an upper bound for d(p, q))."""
    s = (np.arange(m) + 0.5) / m
    pts = p + s[:, None, None] * (q - p)[None]
    v = np.broadcast_to(q - p, pts.shape)
    return spec.F(pts, v).mean(axis=0)


def _lagrange(s, order):
    """Weights and derivative weights of Lagrange interpolation on nodes
    -(order//2 - 1) .. order//2 at fractional position s in [0, 1)."""
    nodes = np.arange(-(order // 2 - 1), order // 2 + 1, dtype=float)
    s = s[..., None]
    w = np.ones(s.shape[:-1] + (order,))
    dw = np.zeros_like(w)
    for a in range(order):
        num = np.ones(s.shape[:-1])
        den = 1.0
        for b in range(order):
            if b != a:
                num = num * (s[..., 0] - nodes[b])
                den *= nodes[a] - nodes[b]
        w[..., a] = num / den
        # derivative of the product
        tot = np.zeros(s.shape[:-1])
        for c in range(order):
            if c == a:
                continue
            prod = np.ones(s.shape[:-1])
            for b in range(order):
                if b != a and b != c:
                    prod = prod * (s[..., 0] - nodes[b])
            tot = tot + prod
        dw[..., a] = tot / den
    return nodes.astype(int), w, dw


class _Fan:
    """Unit-speed geodesic fan from p and its (theta, t) interpolant."""

    def __init__(self, spec, p, rays, T, dt, inside, order=6):
        self.M = rays
        self.dth = 2 * np.pi / rays
        self.theta = self.dth * np.arange(rays)
        y0 = unit_directions(spec, p, self.theta)
        steps = int(np.ceil(T / dt))
        self.dt = T / steps
        path = geodesic(spec, np.broadcast_to(p, y0.shape), y0, T, steps, inside=inside)
        self.X, self.V = path.x, path.y           # (M, steps+1, n)
        self.steps = steps
        self.order = order
        ok = np.all(np.isfinite(self.X), axis=-1)
        kk, jj = np.nonzero(ok[:, 1:])
        jj = jj + 1
        self.kj = np.stack([kk, jj], -1)
        self.tree = cKDTree(self.X[kk, jj])

    def eval(self, th, t):
        """Interpolated position, d/dtheta and d/dt (the velocity)."""
        u = th / self.dth
        k = np.floor(u).astype(int)
        s = u - k
        nodes, w, dw = _lagrange(s, self.order)
        j = np.clip(np.floor(t / self.dt).astype(int), 0, self.steps - 1)
        tau = t / self.dt - j
        h00 = 2 * tau ** 3 - 3 * tau ** 2 + 1
        h10 = tau ** 3 - 2 * tau ** 2 + tau
        h01 = -2 * tau ** 3 + 3 * tau ** 2
        h11 = tau ** 3 - tau ** 2
        d00 = (6 * tau ** 2 - 6 * tau) / self.dt
        d10 = 3 * tau ** 2 - 4 * tau + 1
        d01 = (-6 * tau ** 2 + 6 * tau) / self.dt
        d11 = 3 * tau ** 2 - 2 * tau
        P = 0.0
        Pth = 0.0
        Pt = 0.0
        for a, off in enumerate(nodes):
            kr = (k + off) % self.M
            X0, X1 = self.X[kr, j], self.X[kr, j + 1]
            V0, V1 = self.V[kr, j] * self.dt, self.V[kr, j + 1] * self.dt
            H = h00[:, None] * X0 + h10[:, None] * V0 + h01[:, None] * X1 + h11[:, None] * V1
            Ht = d00[:, None] * X0 + d10[:, None] * V0 / self.dt + d01[:, None] * X1 \
                + d11[:, None] * V1 / self.dt
            P = P + w[:, a, None] * H
            Pth = Pth + dw[:, a, None] * H / self.dth
            Pt = Pt + w[:, a, None] * Ht
        return P, Pth, Pt

    def invert(self, q, th, t, iters=30):
        """Newton on interp(theta, t) = q from the given start."""
        th = th.astype(float).copy()
        t = t.astype(float).copy()
        for _ in range(iters):
            P, Pth, Pt = self.eval(th, t)
            res = q - P
            Jm = np.stack([Pth, Pt], -1)
            det = Jm[:, 0, 0] * Jm[:, 1, 1] - Jm[:, 0, 1] * Jm[:, 1, 0]
            det = np.where(np.abs(det) > 1e-300, det, np.nan)
            dth = (Jm[:, 1, 1] * res[:, 0] - Jm[:, 0, 1] * res[:, 1]) / det
            dtt = (-Jm[:, 1, 0] * res[:, 0] + Jm[:, 0, 0] * res[:, 1]) / det
            dth = np.clip(dth, -2 * self.dth, 2 * self.dth)
            th = np.mod(th + dth, 2 * np.pi)
            t = np.clip(t + dtt, 0.0, self.steps * self.dt)
            if np.all(np.abs(res) < 1e-13):
                break
        P, Pth, Pt = self.eval(th, t)
        res = np.linalg.norm(q - P, axis=-1)
        # the interpolant needs finite samples on every ray it touched
        return th, t, Pt, res


def _eikonal(spec, grid, p, region_mask, dirs=64, tol=1e-11, max_iter=20000):
    """Semi-Lagrangian value iteration for forward distance:
    r(x) = min_m r(x - h e_m) + h F(x - h e_m / 2, e_m)."""
    pts = grid.points
    h = grid.h
    k1, k2 = grid.shape
    ang = 2 * np.pi * np.arange(dirs) / dirs
    E = np.stack([np.cos(ang), np.sin(ang)], -1)
    big = 1e30
    cost, coords = [], []
    for e in E:
        mid = pts - 0.5 * h * e
        inside = spec.in_domain(mid)
        c = np.full(grid.shape, big)
        c[inside] = h * spec.F(mid[inside], np.broadcast_to(e, mid[inside].shape))
        cost.append(c)
        src = (pts - h * e - np.asarray(grid.lo)) / h
        coords.append(np.stack([src[..., 0].ravel(), src[..., 1].ravel()]))
    d = np.linalg.norm(pts - p, axis=-1)
    seed = d <= 3 * h
    r = np.full(grid.shape, big)
    r[seed] = spec.F(np.broadcast_to(p, pts[seed].shape), pts[seed] - p)
    active = spec.in_domain(pts) & ~seed
    for _ in range(max_iter):
        best = np.full(grid.shape, big)
        for c, co in zip(cost, coords):
            v = map_coordinates(r, co, order=1, mode="constant", cval=big).reshape(k1, k2)
            np.minimum(best, v + c, out=best)
        new = np.where(active, np.minimum(r, best), r)
        change = np.max(np.abs(np.where(new < big / 2, new - r, 0.0)))
        newly = np.sum((new < big / 2) & (r >= big / 2))
        r = new
        if change < tol and newly == 0:
            break
    r = np.where(r < big / 2, r, np.nan)
    return r


def distance_field(spec, measure, p, lo, hi, k, method="shooting", region=None,
                   rays=None, dt=None, T=None, cross_check=False):
    """Forward distance r = d(p, .) on the k x k grid spanning [lo, hi].

    ``method='shooting'`` integrates a fan of unit-speed geodesics and inverts
    an interpolant of the fan at every node; ``'eikonal'`` solves the
    anisotropic eikonal equation by semi-Lagrangian value iteration.
    ``region`` (with ``contains``) restricts the evaluation set.
    """
    p = np.asarray(p, dtype=float)
    if not spec.in_domain(p):
        raise DomainError("base point outside the domain")
    grid = box_grid(lo, hi, k)
    h = grid.h
    pts = grid.points
    region_mask = spec.in_domain(pts)
    if region is not None:
        region_mask &= region.contains(pts)
    near_p = np.linalg.norm(pts - p, axis=-1) <= 3 * h
    if method == "eikonal":
        r = _eikonal(spec, grid, p, region_mask)
        reached = np.isfinite(r) & region_mask
        r = np.where(reached, r, np.nan)
        grad = _grad_from_r(spec, grid, r)
        smooth = reached & ~near_p & _interior(reached)
        return DistanceField(p=p, grid=grid.with_values(r), grad_r=grad, smooth_mask=smooth,
                             method="eikonal", reached=reached, region_mask=region_mask)
    if method != "shooting":
        raise ValueError("method must be 'shooting' or 'eikonal'")
    lo_a, hi_a = np.asarray(lo, float), np.asarray(hi, float)
    if T is None:
        corners = np.array([[lo_a[0], lo_a[1]], [lo_a[0], hi_a[1]],
                            [hi_a[0], lo_a[1]], [hi_a[0], hi_a[1]]])
        corners = corners[spec.in_domain(corners)] if np.any(spec.in_domain(corners)) else corners
        bnd = pts[region_mask]
        T = 1.05 * float(np.max(_straight_length(spec, p, bnd))) + 4 * h
    if rays is None:
        rays = 360
    if dt is None:
        dt = min(0.02, T / 50)
    margin = 6 * h

    def inside(x):
        return np.all((x >= lo_a - margin) & (x <= hi_a + margin), axis=-1)

    fan = _Fan(spec, p, rays, T, dt, inside)
    q = pts[region_mask & ~near_p]
    _, idx = fan.tree.query(q)
    kj = fan.kj[idx]
    th0 = fan.theta[kj[:, 0]]
    t0 = kj[:, 1] * fan.dt
    with np.errstate(all="ignore"):
        th, t, vel, res = fan.invert(q, th0, t0)
    good = np.isfinite(res) & (res < 1e-8) & np.all(np.isfinite(vel), axis=-1)
    r = np.full(grid.shape, np.nan)
    grad = np.full(grid.shape + (spec.n,), np.nan)
    sel = region_mask & ~near_p
    rv = np.where(good, t, np.nan)
    r[sel] = rv
    gv = np.where(good[:, None], vel, np.nan)
    grad[sel] = gv
    # cut-locus heuristic: a sample from a ray > 0.3 rad away arrives within 2h
    cut = np.zeros(len(q), dtype=bool)
    kn = min(24, len(fan.kj))
    dist, nb = fan.tree.query(q, k=kn)
    nkj = fan.kj[nb]
    dth = np.abs(np.angle(np.exp(1j * (fan.theta[nkj[..., 0]] - th[:, None]))))
    tt = nkj[..., 1] * fan.dt
    cut = np.any((dth > 0.3) & (dist < 3 * h) & (np.abs(tt - t[:, None]) < 2 * h + fan.dt), axis=1)
    cut_full = np.zeros(grid.shape, dtype=bool)
    cut_full[sel] = cut
    # nodes next to p: straight-segment value, never smooth
    pn = region_mask & near_p
    r[pn] = spec.F(np.broadcast_to(p, pts[pn].shape), pts[pn] - p)
    reached = np.isfinite(r) & region_mask
    smooth = reached & ~near_p & ~cut_full
    df = DistanceField(p=p, grid=grid.with_values(r), grad_r=grad, smooth_mask=smooth,
                       method="shooting", reached=reached, region_mask=region_mask)
    if cross_check:
        re = _eikonal(spec, grid, p, region_mask)
        m = smooth & np.isfinite(re)
        df.disagreement = float(np.max(np.abs(re[m] - r[m]))) if np.any(m) else 0.0
        if df.disagreement > 10 * h:
            df.warning = True
            warnings.warn("shooting and eikonal distances disagree by more than 10h")
    return df


def _interior(mask):
    out = mask.copy()
    out[0, :] = out[-1, :] = out[:, 0] = out[:, -1] = False
    for s in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        out &= np.roll(mask, s, axis=(0, 1))
    return out


def _grad_from_r(spec, grid, r):
    """Gradient vector from central differences of r (Legendre inverse)."""
    from .metric import to_tangent
    h = grid.h
    dr = np.full(grid.shape + (2,), np.nan)
    dr[1:-1, :, 0] = (r[2:] - r[:-2]) / (2 * h)
    dr[:, 1:-1, 1] = (r[:, 2:] - r[:, :-2]) / (2 * h)
    ok = np.all(np.isfinite(dr), axis=-1) & (np.linalg.norm(np.nan_to_num(dr), axis=-1) > 1e-12)
    out = np.full(grid.shape + (2,), np.nan)
    if np.any(ok):
        y, _, _ = to_tangent(spec, grid.points[ok], dr[ok], raise_on_fail=False)
        out[ok] = y
    return out


def eikonal_residual(spec, df):
    """|F*(x, dr) - 1| on the smooth mask, dr by central differences."""
    from .metric import dual_norm
    h = df.h
    r = df.r
    dr = np.full(r.shape + (2,), np.nan)
    dr[1:-1, :, 0] = (r[2:] - r[:-2]) / (2 * h)
    dr[:, 1:-1, 1] = (r[:, 2:] - r[:, :-2]) / (2 * h)
    m = df.smooth_mask & np.all(np.isfinite(dr), axis=-1)
    return np.abs(dual_norm(spec, df.grid.points[m], dr[m]) - 1.0)


# the Laplacian of r ------------------------------------------------------------

def _coefficients(spec, measure, pts, V, ok):
    """e^Phi g^{ij}(x, V) at the nodes in ok (identity elsewhere)."""
    A = np.zeros(pts.shape[:-1] + (2, 2))
    A[..., 0, 0] = A[..., 1, 1] = 1.0
    if np.any(ok):
        g = _g_only(spec, pts[ok], V[ok])
        A[ok] = np.linalg.inv(g) * np.exp(measure.phi_array(pts[ok]))[:, None, None]
    return A


def nonlinear_laplacian_r(spec, measure, field, V):
    """Delta^V r = e^-Phi d_i(e^Phi g^ij(x, V) d_j r) in conservative form.

    ``V`` is an (k1, k2, 2) node field, a constant vector, or the string
    'gradient' for V = grad r.  Face coefficients are averages of the two
    adjacent node values; the cross derivative at a face is the average of
    the two central differences.  Returns a FieldGrid that is NaN outside
    the evaluated set (smooth_mask nodes with a finite 3x3 neighbourhood).
    """
    r = field.r
    h = field.h
    pts = field.grid.points
    if isinstance(V, str):
        if V != "gradient":
            raise ValueError("V must be a field, a vector or 'gradient'")
        V = field.grad_r
    V = np.broadcast_to(np.asarray(V, dtype=float), r.shape + (2,))
    fin = np.isfinite(r) & np.all(np.isfinite(V), axis=-1)
    if np.any(np.linalg.norm(np.where(fin[..., None], V, 1.0), axis=-1) < 1e-12):
        raise ZeroVectorError("reference field vanishes at a node")
    ok3 = fin.copy()
    for s1 in (-1, 0, 1):
        for s2 in (-1, 0, 1):
            ok3 &= np.roll(fin, (s1, s2), axis=(0, 1))
    ok3[0, :] = ok3[-1, :] = ok3[:, 0] = ok3[:, -1] = False
    evalm = field.smooth_mask & ok3
    need = np.zeros_like(evalm)
    for s1 in (-1, 0, 1):
        for s2 in (-1, 0, 1):
            need |= np.roll(evalm, (s1, s2), axis=(0, 1))
    need &= fin
    A = _coefficients(spec, measure, pts, V, need)
    rz = np.where(fin, r, 0.0)
    D1 = np.zeros_like(rz)
    D2 = np.zeros_like(rz)
    D1[1:-1] = (rz[2:] - rz[:-2]) / (2 * h)
    D2[:, 1:-1] = (rz[:, 2:] - rz[:, :-2]) / (2 * h)
    # x1-faces between i and i+1
    A1 = 0.5 * (A[:-1] + A[1:])
    f1 = A1[..., 0, 0] * (rz[1:] - rz[:-1]) / h + A1[..., 0, 1] * 0.5 * (D2[:-1] + D2[1:])
    A2 = 0.5 * (A[:, :-1] + A[:, 1:])
    f2 = A2[..., 1, 1] * (rz[:, 1:] - rz[:, :-1]) / h + A2[..., 1, 0] * 0.5 * (D1[:, :-1] + D1[:, 1:])
    lap = np.full(r.shape, np.nan)
    div = np.zeros(r.shape)
    div[1:-1] += (f1[1:] - f1[:-1]) / h
    div[:, 1:-1] += (f2[:, 1:] - f2[:, :-1]) / h
    sig = np.exp(measure.phi_array(pts[evalm]))
    lap[evalm] = div[evalm] / sig
    return field.grid.with_values(lap)


# curvature families ------------------------------------------------------------

S_ZERO = 1e-8


def _weight(S, Sdot, F2, k, n, scale=1.0):
    if k == np.inf:
        return Sdot * scale
    if k == n:
        return np.where(np.abs(S) > S_ZERO * np.sqrt(F2), -np.inf, Sdot * scale)
    if k < n:
        raise ValueError("k must satisfy k >= n")
    return (Sdot - S * S / (k - n)) * scale


def ricci_family(spec, measure, x, V, W=None, k=np.inf, which="weighted", u=None):
    """Weighted Ricci, weighted flag curvature or mixed weighted Ricci.

    weighted:       Ric(V) + Sdot(V) - S(V)^2 / (k - n)
    mixed:          tr_W R_V(V) + Sdot(V) - S(V)^2 / (k - n),
                    tr_W R_V(V) = trace(g(W)^-1 g(V) R_V)
    weighted_flag:  K(V; u) + [Sdot(V) - S(V)^2 / (k - n)] / ((n - 1) F(V)^2)
    with the k = n branch returning -inf wherever S(V) != 0.
    """
    x = np.asarray(x, dtype=float)
    V = np.asarray(V, dtype=float)
    n = spec.n
    k = float(k)
    if k < n:
        raise ValueError("k must satisfy k >= n")
    Rik, gV = flag_data(spec, x, V)
    S = distortion_s(spec, measure, x, V, "S")
    Sd = distortion_s(spec, measure, x, V, "Sdot")
    F2 = spec.F(x, V) ** 2
    if which == "weighted":
        tr = np.trace(Rik, axis1=-2, axis2=-1)
        return tr + _weight(S, Sd, F2, k, n)
    if which == "mixed":
        if W is None:
            raise ValueError("mixed curvature needs W")
        gW = _g_only(spec, np.broadcast_to(x, np.broadcast_shapes(x.shape, np.shape(W))), W)
        tr = np.einsum("...ij,...jm,...mi->...", np.linalg.inv(gW), gV, Rik)
        return tr + _weight(S, Sd, F2, k, n)
    if which == "weighted_flag":
        if u is None:
            u = W
        if u is None:
            raise ValueError("weighted flag curvature needs a flag vector u")
        u = np.broadcast_to(np.asarray(u, dtype=float), Rik.shape[:-1])
        Vb = np.broadcast_to(V, u.shape)
        K, den = _flag_from(Rik, gV, Vb, u)
        if np.any(den <= 1e-12):
            raise ZeroVectorError("flag vector parallel to V")
        return K + _weight(S, Sd, F2, k, n, 1.0) / ((n - 1) * F2)
    raise ValueError("which must be 'weighted', 'weighted_flag' or 'mixed'")


@dataclass
class CurvatureBound:
    """Sampled lower bound of a curvature family over a region."""

    K: float            # the constant entering the comparison bound (>= 0)
    inf_value: float    # refined infimum of the curvature quantity
    tolerance: float
    witness: tuple
    S_bound: float = 0.0


def _curv_values(spec, measure, x, V, W, N, mode):
    if mode == "mixed":
        return ricci_family(spec, measure, x, V, W, N, "mixed")
    if mode == "infty_variant":
        return ricci_family(spec, measure, x, V, W, np.inf, "mixed")
    if mode == "flag":
        return ricci_family(spec, measure, x, V, W, N, "weighted_flag")
    if mode == "weighted":
        return ricci_family(spec, measure, x, V, None, N, "weighted")
    if mode == "weighted_inf":
        return ricci_family(spec, measure, x, V, None, np.inf, "weighted")
    raise ValueError(f"unknown mode {mode!r}")


def _extent(region):
    if hasattr(region, "radius"):
        return float(region.radius)
    return float(np.max(np.subtract(region.hi, region.lo)))


def curvature_lower_bound(spec, measure, region, N, mode="mixed", samples=2000, seed=0,
                          refine=4, refine_rounds=10):
    """Sampled infimum (with local refinement near the minimizers) of the
    curvature used by the comparison bound.

    mixed: K = max(0, -inf mRic^N_W(V)); flag: K = max(0, -inf K^N (n-1)/(N-1));
    infty_variant: K = max(0, -inf mRic^inf_W(V)) + K'^2/(N - n), K' = sup |S|.
    weighted / weighted_inf: K = max(0, -inf Ric^N(V)) (resp. Ric^inf) over
    unit V, the hypothesis of the compact estimates.
    V and W run over independent indicatrix samples, which contains the
    case W = grad r used by the comparison bound.
    """
    if spec.n != 2:
        raise NotImplementedError("curvature sampling is implemented for n = 2")
    rng = np.random.default_rng(seed)
    x = region.sample(rng, samples)
    x = x[spec.in_domain(x)]
    ang = rng.uniform(0, 2 * np.pi, size=(len(x), 2))
    if mode == "flag":
        # keep the flag away from the pole
        ang[:, 1] = ang[:, 0] + rng.uniform(0.2, np.pi - 0.2, len(x)) * rng.choice([-1, 1], len(x))
    V = unit_directions(spec, x, ang[:, 0])
    W = unit_directions(spec, x, ang[:, 1])
    vals = _curv_values(spec, measure, x, V, W, N, mode)
    S_bound = 0.0
    if mode == "infty_variant":
        S = distortion_s(spec, measure, x, V, "S")
        S_bound = float(np.max(np.abs(S)))
    order = np.argsort(vals)[:refine]
    best = float(vals[order[0]])

    # batched shrinking-neighbourhood search around the best samples
    zbest = np.concatenate([x[order[0]], ang[order[0]]])
    scale = np.array([0.1 * _extent(region)] * 2 + [0.2, 0.2])
    last_gain = 0.0
    starts = np.concatenate([x[order], ang[order]], axis=1)
    for rnd in range(refine_rounds):
        cand = (starts[rng.integers(0, len(starts), 256)]
                + rng.normal(size=(256, 4)) * scale * 0.5 ** rnd)
        cand[:, :2] = region.project(cand[:, :2])
        cand = cand[spec.in_domain(cand[:, :2])]
        if mode == "flag":
            cand = cand[np.abs(np.sin(cand[:, 3] - cand[:, 2])) > 0.05]
        if len(cand) == 0:
            continue
        Vc = unit_directions(spec, cand[:, :2], cand[:, 2])
        Wc = unit_directions(spec, cand[:, :2], cand[:, 3])
        vc = _curv_values(spec, measure, cand[:, :2], Vc, Wc, N, mode)
        i = int(np.argmin(vc))
        gain = best - float(vc[i])
        if gain > 0:
            best, zbest = float(vc[i]), cand[i]
            starts = np.vstack([zbest[None], starts])[: refine]
        last_gain = max(gain, 0.0)
    wit = (zbest[:2], unit_directions(spec, zbest[:2], zbest[2]),
           unit_directions(spec, zbest[:2], zbest[3]))
    # achieved tolerance: the last improvement, doubled for safety
    tol = 2.0 * last_gain
    if mode == "flag":
        K = max(0.0, -best * (spec.n - 1) / (N - 1))
        tol *= (spec.n - 1) / (N - 1)
    else:
        K = max(0.0, -best)
    if mode == "infty_variant":
        K += S_bound ** 2 / (N - spec.n)
    return CurvatureBound(K=K, inf_value=best, tolerance=tol, witness=wit, S_bound=S_bound)


# the comparison check ----------------------------------------------------------

@dataclass
class ComparisonReport:
    N: float
    alpha: float
    K: float
    K0: float
    C_N_alpha: float
    l: float
    C0: float
    mode: str
    policy: str
    margin: np.ndarray          # per evaluated node, worst over the V policy
    r: np.ndarray
    laplacian: np.ndarray
    bound: np.ndarray
    points: np.ndarray
    min_margin: float
    violations: int
    evaluated: int
    tolerance: float = 0.0
    K_tolerance: float = 0.0
    extras: dict = field(default_factory=dict)

    def write_csv(self, path):
        order = np.lexsort((self.points[:, 1], self.points[:, 0]))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x1", "x2", "r", "laplacian", "bound", "margin"])
            for i in order:
                w.writerow([f"{self.points[i, 0]:.10g}", f"{self.points[i, 1]:.10g}",
                            f"{self.r[i]:.10g}", f"{self.laplacian[i]:.10g}",
                            f"{self.bound[i]:.10g}", f"{self.margin[i]:.10g}"])

    def summary(self):
        return (f"mode={self.mode} policy={self.policy} N={self.N:g} alpha={self.alpha:.6g} "
                f"K={self.K:.6g} K0={self.K0:.6g} C(N,alpha)={self.C_N_alpha:.6g} "
                f"C0={self.C0:.6g} evaluated={self.evaluated} "
                f"min_margin={self.min_margin:.6g} violations={self.violations}")


def comparison_bound(r, N, n, alpha, K, K0, mode="mixed"):
    """Right-hand side of the comparison inequality."""
    C0 = np.sqrt(alpha) * K0
    if mode == "flag":
        return alpha * (N - 1) * ct(-K, r) + C0
    C = N + (alpha - 1) * n - alpha
    return C * ct(-K / C, r) + C0


def _policy_fields(policy, field, fan=16, v=None):
    """Reference fields to try: list of (name, V)."""
    if policy == "gradient":
        return [("gradient", "gradient")]
    if policy == "constant":
        if v is None:
            v = (1.0, 0.0)
        return [("constant", np.asarray(v, dtype=float))]
    if policy == "rotating":
        out = [("gradient", "gradient")]
        for a in 2 * np.pi * np.arange(fan) / fan:
            out.append((f"const{a:.3f}", np.array([np.cos(a), np.sin(a)])))
        return out
    raise ValueError("V_policy must be 'gradient', 'constant' or 'rotating'")


def verify_comparison(spec, measure, p, region, N, V_policy="rotating", mode="mixed",
                      k=None, alpha=None, K=None, K0=None, curvature_samples=2000,
                      k0_samples=4096, seed=0, v=None, field_=None, tol=1e-6):
    """Check Delta^V r <= bound on the smooth part of the forward ball.

    alpha, K, K0 are measured when not given (misalignment over the region,
    sampled curvature infimum, sampled non-Riemannian bound).  The grid is
    k x k over the bounding box of ``region`` (a Ball).
    """
    n = spec.n
    if N <= n:
        raise ValueError("N must exceed the dimension")
    if mode not in ("mixed", "flag", "infty_variant"):
        raise ValueError(f"unknown mode {mode!r}")
    c = np.asarray(region.center, dtype=float)
    R = float(region.radius)
    if k is None:
        k = 121
    if field_ is None:
        field_ = distance_field(spec, measure, p, c - R, c + R, k, region=region)
    extras = {}
    if alpha is None:
        alpha = misalignment_region(spec, region, tol=tol, seed=seed)
    K_tol = 0.0
    if K is None:
        cb = curvature_lower_bound(spec, measure, region, N, mode, curvature_samples, seed)
        K, K_tol = cb.K, cb.tolerance
        extras["curvature_inf"] = cb.inf_value
        extras["S_bound"] = cb.S_bound
    if K0 is None:
        K0 = k0_bound(spec, measure, region, k0_samples, seed=seed)
    C = N + (alpha - 1) * n - alpha
    assert C >= N - 1 - 1e-12
    m = None
    worst = None
    for _, V in _policy_fields(V_policy, field_, v=v):
        lap = nonlinear_laplacian_r(spec, measure, field_, V).values
        m = np.isfinite(lap) if m is None else (m & np.isfinite(lap))
        worst = lap if worst is None else np.fmax(worst, lap)
    if m is None or not np.any(m):
        raise ValueError("empty smooth region")
    r = field_.r[m]
    lap = worst[m]
    bnd = comparison_bound(r, N, n, alpha, K, K0, mode)
    margin = bnd - lap
    slack = np.abs(comparison_bound(r, N, n, alpha, K + K_tol, K0, mode) - bnd) + 1e-9
    viol = int(np.sum(margin < -slack))
    l = K / C if mode != "flag" else K
    return ComparisonReport(N=float(N), alpha=float(alpha), K=float(K), K0=float(K0),
                            C_N_alpha=float(C), l=float(l), C0=float(np.sqrt(alpha) * K0),
                            mode=mode, policy=V_policy, margin=margin, r=r, laplacian=lap,
                            bound=bnd, points=field_.grid.points[m],
                            min_margin=float(margin.min()), violations=viol,
                            evaluated=int(m.sum()), tolerance=float(slack.max()),
                            K_tolerance=float(K_tol), extras=extras)
