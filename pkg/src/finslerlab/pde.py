"""Finite-volume solver for (Delta^{grad u} - d/dt - q) u = 0 on 2-D grids.

The operator is discretized in divergence form on cell faces.  At the face
between nodes i and i+1 (along x1) the covector is

    xi_1 = (u_{i+1} - u_i) / h,   xi_2 = mean of the two central x2-differences,

the face flux is e^Phi * l^{-1}(xi) (the Legendre inverse of the discrete
differential) and the node value is the flux divergence divided by e^Phi.
On a torus the face fluxes telescope, so the weighted mass sum(u e^Phi) h^2
is conserved up to round-off.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import bicgstab

from . import jet as J
from .expr import Expression
from .grid import FieldGrid
from .metric import _g_only, _split, f2_jet, to_tangent, unit_directions

RIEMANNIAN_KINDS = ("euclidean", "riemannian", "poincare-disk")


class SolverError(RuntimeError):
    """Run failure: positivity loss, NaN, or Legendre breakdown."""


class CFLError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    t_end: float = 1.0
    dt: float | None = None
    eps_deg: float = 1e-8
    newton_tol: float = 1e-12
    scheme: str = "explicit-rk2"
    cfl_safety: float = 0.4
    snapshot_times: tuple = ()
    boundary_values: object = None      # callable (x, t) for Dirichlet, else frozen data

    def __post_init__(self):
        if self.scheme not in ("explicit-rk2", "semi-implicit"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


# potentials ------------------------------------------------------------------

@dataclass(frozen=True)
class PotentialSpec:
    """q(x, t): a constant or an expression in x1, x2 and t."""

    source: str = "0"
    n: int = 2

    def __post_init__(self):
        object.__setattr__(self, "_expr", Expression(
            str(self.source), [f"x{i + 1}" for i in range(self.n)] + ["t"]))

    @classmethod
    def constant(cls, c, n=2):
        return cls(repr(float(c)), n)

    @property
    def is_constant(self):
        return not self._expr.variables

    @property
    def time_dependent(self):
        return "t" in self._expr.variables

    def __call__(self, x, t=0.0):
        x = np.asarray(x, dtype=float)
        env = {f"x{i + 1}": x[..., i] for i in range(self.n)}
        env["t"] = t
        return np.broadcast_to(np.asarray(self._expr(**env), dtype=float), x.shape[:-1])

    def _jet(self, x, t):
        xs, _ = J.seed(x, np.zeros_like(x), 2, 0, 2)
        env = {f"x{i + 1}": xs[i] for i in range(self.n)}
        env["t"] = t
        q = self._expr(**env)
        if not isinstance(q, J.Jet):
            z = np.zeros(x.shape[:-1])
            return np.broadcast_to(np.asarray(q, float), z.shape), np.zeros(x.shape), \
                np.zeros(x.shape + (self.n,))
        dq = np.stack([q.partial(_unit(2 * self.n, i)) for i in range(self.n)], -1)
        H = np.empty(x.shape + (self.n,))
        for i in range(self.n):
            for j in range(self.n):
                H[..., i, j] = q.partial(_unit(2 * self.n, i, j))
        return q.value, dq, H

    def derivatives(self, x, t=0.0):
        """(q, dq, Hess q) at the points x."""
        return self._jet(np.asarray(x, dtype=float), t)

    def bounds(self, spec, measure, points, times=(0.0,), fan=16):
        """gamma = sup sqrt(g^ij(x, V) q_i q_j) and theta = sup Delta^V q over the
        points, a fan of constant reference fields and V = grad q."""
        points = np.asarray(points, dtype=float)
        gamma, theta = 0.0, -np.inf
        for t in times:
            _, dq, H = self.derivatives(points, t)
            nz = np.linalg.norm(dq, axis=-1) > 1e-14
            phi_d = _phi_grad(measure, points)
            for a in 2 * np.pi * np.arange(fan) / fan:
                V = unit_directions(spec, points, a)
                ginv, dginv = _ginv_dx(spec, points, V)
                gam = np.sqrt(np.einsum("...i,...ij,...j->...", dq, ginv, dq))
                lap = (np.einsum("...ij,...i,...j->...", ginv, phi_d, dq)
                       + np.einsum("...ij,...ij->...", ginv, H)
                       + np.einsum("...iji,...j->...", dginv, dq))
                gamma = max(gamma, float(gam.max()))
                theta = max(theta, float(lap.max()))
            if np.any(nz):
                lapq = _lap_along_gradient(spec, measure, points[nz], dq[nz], H[nz], phi_d[nz])
                theta = max(theta, float(lapq.max()))
            if not np.all(nz):
                theta = max(theta, 0.0)
        return gamma, theta


def _unit(n, *vars_):
    m = [0] * n
    for v in vars_:
        m[v] += 1
    return tuple(m)


def _phi_grad(measure, x):
    if measure.phi_func is None:
        return np.zeros(x.shape)
    xs, _ = J.seed(x, np.zeros_like(x), 1, 0, 1)
    p = measure.phi(xs)
    if not isinstance(p, J.Jet):
        return np.zeros(x.shape)
    n = x.shape[-1]
    return np.stack([p.partial(_unit(2 * n, i)) for i in range(n)], -1)


def _ginv_dx(spec, x, V):
    """g^{-1}(x, V) and d/dx^k g^{ij}(x, V) as [..., i, j, k]."""
    n = spec.n
    F2, _, _ = f2_jet(spec, x, V, 1, 2, 3)
    g = 0.5 * J.grad(J.grad(F2, "y"), "y")
    ginv = J.inv(g)
    d = np.stack([ginv.partial(_unit(2 * n, k)) for k in range(n)], -1)
    return ginv.value, d


def _lap_along_gradient(spec, measure, x, dq, H, phi_d):
    """Delta^{grad q} q = Phi_i y^i + div y with y = l^{-1}(dq); the Jacobian
    of y follows from differentiating l(x, y(x)) = dq(x)."""
    n = spec.n
    y, _ = to_tangent(spec, x, dq)
    F2, _, _ = f2_jet(spec, x, y, 1, 2, 3)
    ly = 0.5 * J.grad(F2, "y")                     # l_k jet
    g = J.grad(ly, "y").value                      # g_km
    dxl = np.stack([ly.partial(_unit(2 * n, i)) for i in range(n)], -1)   # [k, i]
    Dy = np.linalg.solve(g, H - dxl)               # dy^m/dx^i
    return np.einsum("...i,...i->...", phi_d, y) + np.trace(Dy, axis1=-2, axis2=-1)


# discrete operator ------------------------------------------------------------

class _Faces:
    """Sparse difference/averaging operators for one face family."""

    def __init__(self, a, b, active, h, k1, k2, axis, avail, periodic):
        self.a, self.b = a, b           # node indices on both sides (flat)
        self.active = active
        N = k1 * k2
        m = len(a)
        rows = np.arange(m)
        self.S = sp.csr_matrix((np.concatenate([np.full(m, 1 / h), np.full(m, -1 / h)]),
                                (np.concatenate([rows, rows]), np.concatenate([b, a]))),
                               shape=(m, N))
        Dt = _tangential(k1, k2, 1 - axis, h, avail, periodic)
        avg = sp.csr_matrix((np.full(2 * m, 0.5), (np.concatenate([rows, rows]),
                                                   np.concatenate([a, b]))), shape=(m, N))
        self.T = (avg @ Dt).tocsr()
        w = active.astype(float) / h
        # divergence: the face is the right face of node a, the left face of b
        self.D = sp.csr_matrix((np.concatenate([w, -w]),
                                (np.concatenate([a, b]), np.concatenate([rows, rows]))),
                               shape=(N, m))


def _tangential(k1, k2, axis, h, avail, periodic):
    """Node derivative along ``axis``: central where both neighbours are
    available, one-sided where one is, zero otherwise."""
    idx = np.arange(k1 * k2).reshape(k1, k2)
    plus = np.roll(idx, -1, axis=axis)
    minus = np.roll(idx, 1, axis=axis)
    av_p = np.roll(avail, -1, axis=axis).copy()
    av_m = np.roll(avail, 1, axis=axis).copy()
    if not periodic:
        sl_last = [slice(None)] * 2
        sl_last[axis] = -1
        sl_first = [slice(None)] * 2
        sl_first[axis] = 0
        av_p[tuple(sl_last)] = False
        av_m[tuple(sl_first)] = False
    rows, cols, vals = [], [], []
    both = av_p & av_m
    onlyp = av_p & ~av_m
    onlym = av_m & ~av_p
    for m, c, v in ((both, plus, 0.5 / h), (both, minus, -0.5 / h),
                    (onlyp, plus, 1 / h), (onlyp, idx, -1 / h),
                    (onlym, idx, 1 / h), (onlym, minus, -1 / h)):
        rows.append(idx[m])
        cols.append(c[m])
        vals.append(np.full(m.sum(), v))
    N = k1 * k2
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(N, N))


class DiscreteOperator:
    """Delta^{grad u} u on a FieldGrid layout (torus, ball or box)."""

    def __init__(self, spec, measure, grid: FieldGrid, cfg: SolverConfig | None = None):
        self.spec = spec
        self.measure = measure
        self.grid = grid
        self.cfg = cfg or SolverConfig()
        k1, k2 = grid.shape
        h = grid.h
        periodic = grid.domain == "torus"
        mask = grid.active().copy()
        if not periodic:
            if grid.domain == "box" and grid.mask is None:
                mask[:] = True
        self.mask = mask
        dirichlet = grid.domain == "ball" and (grid.boundary or "neumann") == "dirichlet"
        self.dirichlet = dirichlet
        if dirichlet:
            ring = np.zeros_like(mask)
            for s in ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)):
                ring |= np.roll(mask, s, axis=(0, 1))
            ring &= ~mask
            avail = mask | ring
        else:
            ring = np.zeros_like(mask)
            avail = mask
        self.ring = ring
        idx = np.arange(k1 * k2).reshape(k1, k2)
        pts = grid.points
        self.families = []
        for axis in (0, 1):
            a = idx
            b = np.roll(idx, -1, axis=axis)
            ok_a = avail
            ok_b = np.roll(avail, -1, axis=axis)
            sel = np.ones((k1, k2), dtype=bool)
            if not periodic:
                s = [slice(None)] * 2
                s[axis] = -1
                sel[tuple(s)] = False
            in_a = mask
            in_b = np.roll(mask, -1, axis=axis)
            active = sel & ok_a & ok_b & (in_a | in_b)
            fa, fb = a[sel], b[sel]
            fam = _Faces(fa, fb, active[sel], h, k1, k2, axis, avail, periodic)
            mid = pts.copy()
            mid[..., axis] += 0.5 * h
            fam.x = mid[sel]
            fam.axis = axis
            fam.sigma = np.exp(measure.phi_array(fam.x))
            self.families.append(fam)
        self.sigma_nodes = np.exp(measure.phi_array(pts)).ravel()
        self.riemannian = spec.kind in RIEMANNIAN_KINDS
        e1 = np.zeros(spec.n)
        e1[0] = 1.0
        for fam in self.families:
            gi = np.linalg.inv(_g_only(spec, fam.x, np.broadcast_to(e1, fam.x.shape)))
            fam.fallback = gi                  # g^{-1}(x, e1); exact for Riemannian
            fam.y_cache = None
        self.failures = 0

    # -- fluxes
    def _gradient(self, fam, xi):
        """Legendre inverse of the face covectors (with degenerate fallback)."""
        if self.riemannian:
            return np.einsum("fij,fj->fi", fam.fallback, xi), np.zeros(len(xi), bool)
        nx = np.linalg.norm(xi, axis=-1)
        act = fam.active
        scale = nx[act].mean() if np.any(act) else 0.0
        deg = nx <= max(self.cfg.eps_deg * scale, 1e-300)
        y = np.einsum("fij,fj->fi", fam.fallback, xi)
        good = act & ~deg
        failed = np.zeros(len(xi), bool)
        if np.any(good):
            y0 = None if fam.y_cache is None else fam.y_cache[good]
            yg, _, fl = to_tangent(self.spec, fam.x[good], xi[good], y0=y0,
                                   tol=self.cfg.newton_tol, raise_on_fail=False)
            yg[fl] = y[good][fl]
            y[good] = yg
            failed[good] = fl
            if self.spec.dual_func is None:
                fam.y_cache = y.copy()
        return y, failed

    def apply(self, u):
        """Node values of Delta^{grad u} u (zero outside the update mask)."""
        uf = np.asarray(u, dtype=float).ravel()
        out = np.zeros_like(uf)
        nfail = 0
        nfaces = 0
        for fam in self.families:
            xi = np.empty((len(fam.a), 2))
            xi[:, fam.axis] = fam.S @ uf
            xi[:, 1 - fam.axis] = fam.T @ uf
            y, failed = self._gradient(fam, xi)
            nfail += int(failed.sum())
            nfaces += int(fam.active.sum())
            out += fam.D @ (fam.sigma * y[:, fam.axis])
        self.failures = nfail
        if nfaces and nfail > 1e-3 * nfaces:
            raise SolverError(f"Legendre inversion failed at {nfail} of {nfaces} faces")
        out /= self.sigma_nodes
        out = out.reshape(self.grid.shape)
        out[~self.mask] = 0.0
        return out

    def lagged_matrix(self, u):
        """Sparse linear operator with the metric frozen at grad u."""
        uf = np.asarray(u, dtype=float).ravel()
        L = None
        for fam in self.families:
            xi = np.empty((len(fam.a), 2))
            xi[:, fam.axis] = fam.S @ uf
            xi[:, 1 - fam.axis] = fam.T @ uf
            if self.riemannian:
                gi = fam.fallback
            else:
                y, _ = self._gradient(fam, xi)
                nz = np.linalg.norm(y, axis=-1) > 1e-300
                gi = fam.fallback.copy()
                if np.any(nz):
                    gi[nz] = np.linalg.inv(_g_only(self.spec, fam.x[nz], y[nz]))
            a = fam.axis
            normal = sp.diags(fam.sigma * gi[:, a, a]) @ fam.S
            tang = sp.diags(fam.sigma * gi[:, a, 1 - a]) @ fam.T
            term = fam.D @ (normal + tang)
            L = term if L is None else L + term
        return sp.diags(1.0 / self.sigma_nodes) @ L


def nonlinear_laplacian_u(spec, measure, u: FieldGrid, cfg: SolverConfig | None = None):
    """Delta^{grad u} u as a FieldGrid on the same layout."""
    op = DiscreteOperator(spec, measure, u, cfg)
    return u.with_values(op.apply(u.values))


# time stepping ------------------------------------------------------------------

def estimate_kappa(spec, points, fan=16):
    """Largest eigenvalue of g^{-1}(x, V) over the points and a direction fan."""
    pts = np.asarray(points, dtype=float).reshape(-1, spec.n)
    if len(pts) > 4096:
        pts = pts[np.linspace(0, len(pts) - 1, 4096).astype(int)]
    best = 0.0
    for a in 2 * np.pi * np.arange(fan) / fan:
        e = np.broadcast_to([np.cos(a), np.sin(a)], pts.shape)
        g = _g_only(spec, pts, e)
        best = max(best, float(np.max(1.0 / np.linalg.eigvalsh(g)[..., 0])))
    return best


def stable_dt(spec, op, cfg):
    """Explicit step limit cfl_safety * h^2 / (4 kappa_est), with kappa_est the
    largest eigenvalue of g^{-1} (times the face/node density ratio)."""
    grid = op.grid
    kappa = estimate_kappa(spec, grid.points[op.mask])
    ratio = 1.0
    for fam in op.families:
        sa = op.sigma_nodes[fam.a]
        sb = op.sigma_nodes[fam.b]
        ratio = max(ratio, float(np.max(fam.sigma / np.minimum(sa, sb))))
    return cfg.cfl_safety * grid.h ** 2 / (4 * kappa * ratio), kappa


@dataclass
class SolveResult:
    snapshots: list
    times: np.ndarray
    ut: list                    # discrete right-hand side at each snapshot
    mass: np.ndarray
    dt: float
    steps: int
    kappa_est: float
    config: SolverConfig
    manifest: dict = field(default_factory=dict)

    def write(self, directory, prefix="u"):
        """Snapshot CSVs (x1, x2, u) and a manifest text file."""
        os.makedirs(directory, exist_ok=True)
        names = []
        for k, s in enumerate(self.snapshots):
            name = f"{prefix}_{k:04d}.csv"
            s.write_csv(os.path.join(directory, name))
            names.append(name)
        with open(os.path.join(directory, "manifest.txt"), "w") as fh:
            for key in sorted(self.manifest):
                fh.write(f"{key} = {self.manifest[key]}\n")
            fh.write(f"dt = {self.dt!r}\nsteps = {self.steps}\nkappa_est = {self.kappa_est!r}\n")
            for name, t, m in zip(names, self.times, self.mass):
                fh.write(f"snapshot {name} t = {t!r} mass = {m!r}\n")
        return names


def solve_schrodinger(spec, measure, u0: FieldGrid, q: PotentialSpec | None = None,
                      cfg: SolverConfig | None = None, manifest=None):
    """March u_t = Delta^{grad u} u - q u from u0 to cfg.t_end.

    The potential term is applied by Strang splitting (exact exponential
    factors), so a constant q = lambda reproduces exp(-lambda t) times the
    q = 0 run.  Snapshots are taken at cfg.snapshot_times (and at t_end).
    """
    cfg = cfg or SolverConfig()
    q = q or PotentialSpec("0", spec.n)
    op = DiscreteOperator(spec, measure, u0, cfg)
    mask = op.mask
    u = np.array(u0.values, dtype=float)
    if np.any(~np.isfinite(u[mask])) or np.any(u[mask] <= 0):
        raise SolverError("initial data must be positive and finite")
    dt_max, kappa = stable_dt(spec, op, cfg)
    if cfg.scheme == "explicit-rk2":
        if cfg.dt is not None and cfg.dt > dt_max * (1 + 1e-12):
            raise CFLError(f"dt = {cfg.dt:g} exceeds the stability limit {dt_max:g}")
        dt = cfg.dt if cfg.dt is not None else dt_max
    else:
        dt = cfg.dt if cfg.dt is not None else 4 * dt_max
    pts = u0.points
    t0 = u0.t
    times = sorted(set(float(t) for t in cfg.snapshot_times if t0 <= t <= t0 + cfg.t_end)
                   | {t0 + cfg.t_end})
    sig = op.sigma_nodes.reshape(u.shape)
    boundary = _boundary_fn(op, u0, cfg)

    def rhs(v, t):
        if boundary is not None:
            v = boundary(v, t)
        return op.apply(v)

    def qfac(t, tau):
        if q.is_constant:
            return np.exp(-tau * float(q(np.zeros(spec.n))))
        return np.exp(-tau * q(pts, t))

    snaps, uts, mass, out_t = [], [], [], []

    def record(v, t):
        vv = boundary(v, t) if boundary is not None else v
        snaps.append(u0.with_values(vv.copy(), t=t))
        Lu = rhs(vv, t)
        qq = q(pts, t)
        ut = np.where(mask, Lu - qq * vv, 0.0)
        uts.append(u0.with_values(ut, t=t))
        mass.append(float(np.sum((vv * sig)[mask]) * u0.h ** 2))
        out_t.append(t)

    t = t0
    steps = 0
    if times[0] == t0:
        record(u, t0)
    for target in times:
        while t < target - 1e-14 * max(1.0, abs(target)):
            step = min(dt, target - t)
            u = u * qfac(t + 0.25 * step, 0.5 * step)
            if cfg.scheme == "explicit-rk2":
                k1 = rhs(u, t)
                u1 = u + step * k1
                k2 = rhs(u1, t + step)
                u = np.where(mask, 0.5 * (u + u1 + step * k2), u)
            else:
                u = _implicit_step(op, u, step, boundary, t + step)
            u = u * qfac(t + 0.75 * step, 0.5 * step)
            t = t + step if target - (t + step) > 1e-14 else target
            steps += 1
            um = u[mask]
            if not np.all(np.isfinite(um)):
                raise SolverError(f"non-finite values at t = {t:.6g}")
            if np.any(um <= 0):
                bad = np.argwhere(mask & (u <= 0))[0]
                raise SolverError(f"positivity lost at t = {t:.6g}, node {tuple(bad)}")
        if not out_t or out_t[-1] != target:
            record(u, target)
    man = {"scheme": cfg.scheme, "t_end": cfg.t_end, "h": u0.h, "domain": u0.domain,
           "grid": f"{u0.shape[0]}x{u0.shape[1]}", "metric": spec.kind,
           "measure": measure.kind, "potential": q.source}
    man.update(manifest or {})
    return SolveResult(snapshots=snaps, times=np.array(out_t), ut=uts, mass=np.array(mass),
                       dt=dt, steps=steps, kappa_est=kappa, config=cfg, manifest=man)


def _boundary_fn(op, u0, cfg):
    if not op.dirichlet:
        return None
    ring = op.ring
    frozen = np.array(u0.values, dtype=float)
    pts = u0.points

    def apply(v, t):
        v = v.copy()
        if cfg.boundary_values is None:
            v[ring] = frozen[ring]
        else:
            v[ring] = np.broadcast_to(cfg.boundary_values(pts[ring], t), v[ring].shape)
        return v
    return apply


def _implicit_step(op, u, dt, boundary, t_new):
    """Backward Euler with the metric lagged at the current state."""
    v = boundary(u, t_new) if boundary is not None else u
    L = op.lagged_matrix(v)
    free = op.mask.ravel()
    N = free.size
    A = (sp.identity(N, format="csr") - dt * L).tocsr()
    Aff = A[free][:, free]
    rhs = v.ravel()[free] - A[free][:, ~free] @ v.ravel()[~free]
    sol, info = bicgstab(Aff, rhs, x0=v.ravel()[free], rtol=1e-10, atol=0.0, maxiter=2000)
    if info != 0:
        raise SolverError("implicit solve did not converge")
    out = v.ravel().copy()
    out[free] = sol
    return out.reshape(u.shape)
