"""Misalignment and the uniform smoothness/convexity/reversibility constants.

For a point x the local maximal misalignment is

    alpha_M(x) = sup_{V, W, Y} g_V(Y, Y) / g_W(Y, Y)

over nonzero V, W, Y (the quotient is scale-invariant in each argument, so
the supremum over the indicatrix equals the supremum over Euclidean unit
directions).  For a fixed Y the supremum over V and the infimum over W
decouple, which makes the dense grid stage an O(M^2) computation for the
M^3 triples.  The best grid cells are then refined by BFGS.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .metric import DomainError, _g_only, unit_directions

PLATEAU = 1e-9


@dataclass
class MisalignmentReport:
    x: np.ndarray
    alpha_M: float
    alpha_m: float
    kappa: float
    kappa_star: float
    rho: float
    witnesses: dict = field(default_factory=dict)
    tolerance: float = 0.0
    converged: bool = True

    @property
    def alpha(self):
        return self.alpha_M

    def chain_residuals(self):
        """Signed slacks of the inequality chains (all >= -tol when valid)."""
        a, k, ks, r = self.alpha, self.kappa, self.kappa_star, self.rho
        return {
            "alpha_M*alpha_m-1": abs(self.alpha_M * self.alpha_m - 1.0),
            "kappa_star-1/alpha": ks - 1.0 / a,
            "1-kappa_star": 1.0 - ks,
            "kappa-1": k - 1.0,
            "alpha-kappa": a - k,
            "alpha-rho^2": a - r * r,
            "kappa/kappa_star-alpha": k / ks - a,
        }


def _dirs(n, M):
    if n == 2:
        th = np.linspace(0.0, 2 * np.pi, M, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], -1), th
    # n >= 3: Fibonacci-type spread on the sphere (n = 3) or random (n = 4)
    k = M * M // 2
    if n == 3:
        i = np.arange(k) + 0.5
        phi = np.arccos(1 - 2 * i / k)
        th = np.pi * (1 + 5 ** 0.5) * i
        E = np.stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], -1)
    else:
        E = np.random.default_rng(0).normal(size=(k, n))
        E /= np.linalg.norm(E, axis=1, keepdims=True)
    return E, None


def _vec(params, n):
    if n == 2:
        return np.stack([np.cos(params), np.sin(params)], -1)
    return params.reshape(-1, n)


def _quad(g, Y):
    return np.einsum("...i,...ij,...j->...", Y, g, Y)


def _grid_tables(spec, x, M):
    """Q[p, k, m] = g_{E_k}(E_m, E_m) at each point x_p and F^2 values."""
    E, th = _dirs(spec.n, M)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    P = x.shape[0]
    G = _g_only(spec, np.broadcast_to(x[:, None, :], (P, len(E), spec.n)),
                np.broadcast_to(E[None], (P, len(E), spec.n)))
    Q = np.einsum("pkij,mi,mj->pkm", G, E, E)
    F = spec.F(np.broadcast_to(x[:, None, :], (P, len(E), spec.n)),
               np.broadcast_to(E[None], (P, len(E), spec.n)))
    Fm = spec.F(np.broadcast_to(x[:, None, :], (P, len(E), spec.n)),
                np.broadcast_to(-E[None], (P, len(E), spec.n)))
    return E, th, Q, F, Fm


def _refine(fun, p0, tol, maximize=True):
    """Repeated BFGS passes until the improvement drops below tol."""
    sign = -1.0 if maximize else 1.0
    best_p = np.asarray(p0, dtype=float)
    best = fun(best_p)
    improvement = np.inf
    for _ in range(10):
        res = minimize(lambda p: sign * fun(p), best_p, method="BFGS",
                       options={"gtol": 1e-11, "maxiter": 200})
        val = fun(res.x)
        gain = (val - best) if maximize else (best - val)
        if gain > 0:
            best, best_p = val, res.x
        improvement = max(gain, 0.0)
        if improvement < tol:
            return best, best_p, improvement, True
    return best, best_p, improvement, False


def _triple_fun(spec, x):
    """Objective in the parameters of (V, W, Y): log g_V(Y,Y) - log g_W(Y,Y)."""
    n = spec.n
    x = np.asarray(x, dtype=float)

    def f(p):
        if n == 2:
            V, W, Y = _vec(np.asarray(p), 2)
        else:
            V, W, Y = np.asarray(p).reshape(3, n)
        g = _g_only(spec, np.stack([x, x]), np.stack([V, W]))
        return float(np.log(_quad(g[0], Y)) - np.log(_quad(g[1], Y)))
    return f


def _params(n, th, E, idx):
    if n == 2:
        return np.array([th[i] for i in idx])
    return np.concatenate([E[i] for i in idx])


def _to_vecs(n, p, k):
    return _vec(np.asarray(p), 2) if n == 2 else np.asarray(p).reshape(k, n)


def misalignment_local(spec, x, tol=1e-6, grid=64):
    """Local misalignment, uniform constants and reversibility at x."""
    if not (1e-8 <= tol <= 1e-2):
        raise ValueError("tol must lie in [1e-8, 1e-2]")
    x = np.asarray(x, dtype=float)
    if not spec.in_domain(x):
        raise DomainError("point outside the metric's domain")
    n = spec.n
    E, th, Q, F, Fm = _grid_tables(spec, x, grid)
    Q, F, Fm = Q[0], F[0], Fm[0]
    qmax, qmin = Q.max(axis=0), Q.min(axis=0)
    ratio = qmax / qmin
    witnesses = {}
    achieved = 0.0
    converged = True
    if ratio.max() - 1.0 < PLATEAU:
        aM, am = 1.0, 1.0
        witnesses["alpha"] = "degenerate: all triples"
    else:
        m = int(np.argmax(ratio))
        p0 = _params(n, th, E, [int(np.argmax(Q[:, m])), int(np.argmin(Q[:, m])), m])
        f = _triple_fun(spec, x)
        best, p, imp, ok = _refine(f, p0, tol * 1e-3, maximize=True)
        aM = float(np.exp(best))
        V, W, Y = _to_vecs(n, p, 3)
        witnesses["alpha_M"] = _indicatrix(spec, x, np.stack([V, W, Y]))
        # infimum: the triple with the roles of V and W exchanged
        m2 = int(np.argmin(qmin / qmax))
        p1 = _params(n, th, E, [int(np.argmin(Q[:, m2])), int(np.argmax(Q[:, m2])), m2])
        worst, p2, imp2, ok2 = _refine(f, p1, tol * 1e-3, maximize=False)
        am = float(np.exp(worst))
        V, W, Y = _to_vecs(n, p2, 3)
        witnesses["alpha_m"] = _indicatrix(spec, x, np.stack([V, W, Y]))
        achieved = max(achieved, imp * aM, imp2 * am)
        converged &= ok and ok2
    # kappa, kappa*: g_V(Y, Y) / F(Y)^2
    K = Q / (F[None, :] ** 2)
    if K.max() - K.min() < PLATEAU:
        kap = kap_s = float(K.mean())
        witnesses["kappa"] = "degenerate: all pairs"
    else:
        fk = _pair_fun(spec, x)
        i, j = np.unravel_index(np.argmax(K), K.shape)
        bk, pk, imp, ok = _refine(fk, _params(n, th, E, [i, j]), tol * 1e-3, True)
        i, j = np.unravel_index(np.argmin(K), K.shape)
        bs, ps, imp2, ok2 = _refine(fk, _params(n, th, E, [i, j]), tol * 1e-3, False)
        kap, kap_s = float(np.exp(bk)), float(np.exp(bs))
        witnesses["kappa"] = _indicatrix(spec, x, _to_vecs(n, pk, 2))
        witnesses["kappa_star"] = _indicatrix(spec, x, _to_vecs(n, ps, 2))
        achieved = max(achieved, imp * kap, imp2 * kap_s)
        converged &= ok and ok2
    # reversibility
    R = F / Fm
    if R.max() - 1.0 < PLATEAU:
        rho = 1.0
    else:
        fr = _rev_fun(spec, x)
        br, pr, imp, ok = _refine(fr, _params(n, th, E, [int(np.argmax(R))]), tol * 1e-3, True)
        rho = float(np.exp(br))
        witnesses["rho"] = _indicatrix(spec, x, _to_vecs(n, pr, 1))
        achieved = max(achieved, imp * rho)
        converged &= ok
    return MisalignmentReport(x=x, alpha_M=aM, alpha_m=am, kappa=kap, kappa_star=kap_s,
                              rho=rho, witnesses=witnesses,
                              tolerance=max(achieved, 1e-3 * tol), converged=bool(converged))


def _indicatrix(spec, x, vecs):
    vecs = np.asarray(vecs, dtype=float)
    return vecs / spec.F(np.broadcast_to(x, vecs.shape), vecs)[:, None]


def _pair_fun(spec, x):
    n = spec.n
    x = np.asarray(x, dtype=float)

    def f(p):
        V, Y = _to_vecs(n, p, 2)
        g = _g_only(spec, x[None], V[None])[0]
        return float(np.log(_quad(g, Y)) - 2 * np.log(spec.F(x, Y)))
    return f


def _rev_fun(spec, x):
    n = spec.n
    x = np.asarray(x, dtype=float)

    def f(p):
        V = _to_vecs(n, p, 1)[0]
        return float(np.log(spec.F(x, V)) - np.log(spec.F(x, -V)))
    return f


def alpha_grid(spec, points, grid=64):
    """Grid-stage local misalignment at many points (no refinement)."""
    _, _, Q, _, _ = _grid_tables(spec, points, grid)
    return (Q.max(axis=1) / Q.min(axis=1)).max(axis=-1)


def _region_points(region, samples, seed):
    rng = np.random.default_rng(seed)
    pts = [region.sample(rng, samples)]
    if region.n == 2:
        pts.append(region.grid(9))
    return np.concatenate(pts)


def misalignment_region(spec, region, tol=1e-6, samples=256, seed=0, grid=64,
                        refine=3, return_point=False):
    """sup of the local misalignment over a region (sampled, then refined)."""
    pts = _region_points(region, samples, seed)
    pts = pts[spec.in_domain(pts)]
    if len(pts) == 0:
        raise ValueError("empty region")
    a = np.concatenate([alpha_grid(spec, chunk, grid)
                        for chunk in np.array_split(pts, max(1, len(pts) // 128))])
    if a.max() - 1.0 < PLATEAU:
        return (1.0, pts[0]) if return_point else 1.0
    order = np.argsort(-a)[:refine]
    best, best_x = -np.inf, None
    for k in order:
        val, xk = _refine_point(spec, region, pts[k], tol, grid, "alpha")
        if val > best:
            best, best_x = val, xk
    return (best, best_x) if return_point else best


def _refine_point(spec, region, x0, tol, grid, which):
    """Joint refinement over the point and the directions."""
    rep = misalignment_local(spec, x0, tol=tol, grid=grid)
    n = spec.n
    if which == "alpha":
        start = rep.alpha_M
        if not isinstance(rep.witnesses.get("alpha_M"), np.ndarray):
            return start, x0
        dirs = rep.witnesses["alpha_M"]
        fun = _triple_fun
    else:
        raise ValueError(which)
    p_dirs = np.arctan2(dirs[:, 1], dirs[:, 0]) if n == 2 else dirs.ravel()

    def obj(z):
        xz = region.project(z[:n])
        if not spec.in_domain(xz):
            return 1e6
        return -fun(spec, xz)(z[n:])

    cons = []
    if hasattr(region, "radius"):
        c = np.asarray(region.center)
        cons = [{"type": "ineq", "fun": lambda z: region.radius ** 2 - np.sum((z[:n] - c) ** 2)}]
    z0 = np.concatenate([x0, p_dirs])
    res = minimize(obj, z0, method="SLSQP", constraints=cons,
                   options={"ftol": 1e-12, "maxiter": 200})
    val = float(np.exp(-res.fun)) if np.isfinite(res.fun) else start
    if val > start and region.contains(region.project(res.x[:n])):
        return val, region.project(res.x[:n])
    return start, x0


def uniform_constants(spec, region, tol=1e-6, samples=128, seed=0, grid=64, refine=3):
    """(kappa, kappa*, rho) over a region."""
    pts = _region_points(region, samples, seed)
    pts = pts[spec.in_domain(pts)]
    if len(pts) == 0:
        raise ValueError("empty region")
    kap, kap_s, rho = [], [], []
    for chunk in np.array_split(pts, max(1, len(pts) // 128)):
        _, _, Q, F, Fm = _grid_tables(spec, chunk, grid)
        K = Q / (F[:, None, :] ** 2)
        kap.append(K.max(axis=(1, 2)))
        kap_s.append(K.min(axis=(1, 2)))
        rho.append((F / Fm).max(axis=1))
    kap, kap_s, rho = map(np.concatenate, (kap, kap_s, rho))
    out = []
    for vals, key, sign in ((kap, "kappa", 1), (kap_s, "kappa_star", -1), (rho, "rho", 1)):
        cand = np.argsort(-sign * vals)[:refine]
        best = None
        for k in cand:
            rep = misalignment_local(spec, pts[k], tol=tol, grid=grid)
            v = getattr(rep, key)
            if best is None or sign * v > sign * best:
                best = v
        out.append(best)
    return tuple(out)


def write_profile_csv(path, xs, alphas):
    """CSV of (x, alpha(x)) rows."""
    xs = np.atleast_2d(xs)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i + 1}" for i in range(xs.shape[1])] + ["alpha"])
        for x, a in zip(xs, alphas):
            w.writerow([repr(float(v)) for v in x] + [repr(float(a))])
