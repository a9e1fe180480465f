"""Finsler metrics: construction, validation, fundamental tensors, duality.

A metric is represented by :class:`MetricSpec`, which wraps a function
``F(xs, ys)`` of coordinate lists.  The function is written with the
dispatching math of :mod:`finslerlab.jet`, so the same code evaluates plain
arrays and truncated Taylor jets; all tensors are read off jets of ``F**2``.

Arrays follow the convention ``(..., n)`` for points and vectors, with any
leading batch shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import jet as J
from .expr import Expression, ExpressionError


class MetricError(ValueError):
    pass


class ZeroVectorError(MetricError):
    pass


class DomainError(MetricError):
    pass


class DegenerateMetricError(MetricError):
    pass


class NonPositiveMetricError(MetricError):
    pass


class HomogeneityError(MetricError):
    pass


class LegendreError(MetricError):
    pass


ZERO_TOL = 1e-12
DOMAIN_MARGIN = 1e-6


@dataclass(frozen=True)
class Certificate:
    samples: int
    homogeneity_residual: float
    min_eigenvalue: float
    min_F: float

    def __str__(self):
        return (f"samples={self.samples} homogeneity_residual={self.homogeneity_residual:.3e} "
                f"min_eig(g)={self.min_eigenvalue:.6g} min_F={self.min_F:.6g}")


@dataclass(frozen=True)
class MetricSpec:
    """A Finsler structure F(x, y) on (a domain of) R^n."""

    n: int
    kind: str
    func: Callable = field(repr=False)
    params: dict = field(default_factory=dict, compare=False)
    domain_radius: Optional[float] = None
    dual_func: Optional[Callable] = field(default=None, repr=False)
    certificate: Optional[Certificate] = None
    x_free: bool = False
    dual_parts: Optional[Callable] = field(default=None, repr=False)

    # evaluation ----------------------------------------------------------
    def evaluate(self, xs, ys):
        """F on coordinate lists (arrays or jets)."""
        return self.func(xs, ys)

    def F(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x, y = np.broadcast_arrays(x, y)
        return np.asarray(self.func(_split(x), _split(y)), dtype=float)

    def in_domain(self, x):
        x = np.asarray(x, dtype=float)
        if self.domain_radius is None:
            return np.ones(x.shape[:-1], dtype=bool)
        return np.linalg.norm(x, axis=-1) < self.domain_radius - DOMAIN_MARGIN

    def reversed(self):
        """The reverse metric F(x, -y)."""
        f = self.func
        rev = replace(self, kind=f"reversed({self.kind})",
                      func=lambda xs, ys: f(xs, [-v for v in ys]),
                      dual_func=None, certificate=self.certificate)
        if self.dual_func is not None:
            d = self.dual_func
            rev = replace(rev, dual_func=lambda xs, zs: d(xs, [-v for v in zs]))
        if self.dual_parts is not None:
            dp = self.dual_parts

            def parts(x):
                ainv, bs, lam = dp(x)
                return ainv, -bs, lam
            rev = replace(rev, dual_parts=parts)
        return rev

    def sample_points(self, rng, m):
        """Points for validation sampling inside the domain."""
        if self.domain_radius is not None:
            r = 0.9 * self.domain_radius * np.sqrt(rng.random(m))
            d = rng.normal(size=(m, self.n))
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            return r[:, None] * d
        return rng.uniform(-1.0, 1.0, size=(m, self.n))


def _split(a):
    return [a[..., i] for i in range(a.shape[-1])]


def _env(xs, ys):
    env = {f"x{i + 1}": v for i, v in enumerate(xs)}
    env.update({f"y{i + 1}": v for i, v in enumerate(ys)})
    return env


def _coef(value, n):
    """Coefficient function of x from a number or an expression string."""
    if isinstance(value, Expression):
        e = value
    elif isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            e = Expression(value, [f"x{i + 1}" for i in range(n)])
    else:
        return float(value)
    if not e.variables:
        return float(e())

    def f(xs):
        return e(**{f"x{i + 1}": v for i, v in enumerate(xs)})
    return f


def _inv_small(m):
    """Batched inverse with an explicit 2 x 2 branch."""
    if m.shape[-1] != 2:
        return np.linalg.inv(m)
    a, b, c, d = m[..., 0, 0], m[..., 0, 1], m[..., 1, 0], m[..., 1, 1]
    det = a * d - b * c
    out = np.empty(m.shape)
    out[..., 0, 0] = d / det
    out[..., 0, 1] = -b / det
    out[..., 1, 0] = -c / det
    out[..., 1, 1] = a / det
    return out


def _is_zero(v):
    return isinstance(v, float) and v == 0.0


def _at(c, xs):
    return c(xs) if callable(c) else c


# built-in families --------------------------------------------------------

def randers(a=None, b=None, n=2, domain_radius=None, validate=True, kind="randers"):
    """F = sqrt(a_ij(x) y^i y^j) + b_i(x) y^i.

    ``a`` is an n x n nested list and ``b`` a length-n list of numbers or
    expression strings in x1..xn; ``a`` defaults to the identity and ``b`` to
    zero.  A closed-form dual norm is attached.
    """
    if a is None:
        a = [[1.0 if i == j else 0.0 for j in range(n)] for i in range(n)]
    if b is None:
        b = [0.0] * n
    n = len(a)
    A = [[_coef(a[i][j], n) for j in range(n)] for i in range(n)]
    B = [_coef(v, n) for v in b]
    ident = all((A[i][j] == (1.0 if i == j else 0.0)) for i in range(n) for j in range(n))
    has_b = any(callable(v) or v != 0.0 for v in B)
    x_free = not any(callable(v) for row in A for v in row) and not any(callable(v) for v in B)

    def amat(xs):
        return [[_at(A[i][j], xs) for j in range(n)] for i in range(n)]

    def func(xs, ys):
        if ident:
            q = ys[0] * ys[0]
            for i in range(1, n):
                q = q + ys[i] * ys[i]
        else:
            am = amat(xs)
            q = 0.0
            for i in range(n):
                for j in range(n):
                    if not _is_zero(am[i][j]):
                        q = q + am[i][j] * ys[i] * ys[j]
        f = J.sqrt(q)
        if has_b:
            for i in range(n):
                bi = _at(B[i], xs)
                if not _is_zero(bi):
                    f = f + bi * ys[i]
        return f

    def parts(x):
        """a^{-1}(x) and b#(x) = a^{-1} b as arrays."""
        xs = _split(np.asarray(x, dtype=float))
        shape = np.shape(xs[0])
        am = np.array([np.broadcast_to(np.asarray(v, dtype=float), shape)
                       for row in amat(xs) for v in row])
        am = np.moveaxis(am.reshape((n, n) + shape), (0, 1), (-2, -1))
        ainv = _inv_small(am)
        bvec = np.stack([np.broadcast_to(np.asarray(_at(v, xs), dtype=float), shape)
                         for v in B], axis=-1)
        bsharp = np.einsum("...ij,...j->...i", ainv, bvec)
        return ainv, bsharp, 1.0 - np.einsum("...i,...i->...", bvec, bsharp)

    def dual(xs, zs):
        # zs: covector components; xs are plain arrays here
        ainv, bsharp, lam = parts(np.stack(np.broadcast_arrays(*xs), -1))
        q = 0.0
        for i in range(n):
            for j in range(n):
                q = q + ainv[..., i, j] * zs[i] * zs[j]
        zb = 0.0
        for i in range(n):
            zb = zb + bsharp[..., i] * zs[i]
        return (J.sqrt(lam * q + zb * zb) - zb) / lam

    spec = MetricSpec(n=n, kind=kind, func=func,
                      params={"a": a, "b": b}, domain_radius=domain_radius,
                      dual_func=dual, x_free=x_free, dual_parts=parts)
    return validate_metric(spec) if validate else spec


def riemannian(a, domain_radius=None, validate=True):
    """F = sqrt(a_ij(x) y^i y^j)."""
    return randers(a=a, b=None, domain_radius=domain_radius, validate=validate,
                   kind="riemannian")


def euclidean(n=2):
    return randers(n=n, kind="euclidean")


def poincare_disk():
    """Poincare model of the hyperbolic plane (curvature -1)."""
    c = "4/(1-x1^2-x2^2)^2"
    return riemannian([[c, 0.0], [0.0, c]], domain_radius=1.0)


def funk_disk(n=2, validate=True):
    """Funk metric of the unit ball."""

    def func(xs, ys):
        A = 1.0
        for v in xs:
            A = A - v * v
        xy = xs[0] * ys[0]
        yy = ys[0] * ys[0]
        for i in range(1, n):
            xy = xy + xs[i] * ys[i]
            yy = yy + ys[i] * ys[i]
        return (J.sqrt(A * yy + xy * xy) + xy) / A

    spec = MetricSpec(n=n, kind="funk-disk", func=func, domain_radius=1.0)
    return validate_metric(spec) if validate else spec


def parse_metric(expr: str, n: int, kind: str = "expression", domain_radius=None,
                 validate=True):
    """Metric from a formula in x1..xn, y1..yn."""
    if n < 2 or n > 4:
        raise MetricError("dimension must be between 2 and 4")
    names = [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(n)]
    e = Expression(expr, names)
    x_free = not any(v.startswith("x") for v in e.variables)
    if kind == "minkowski" and not x_free:
        raise MetricError("a minkowski norm must not depend on x")

    def func(xs, ys):
        return e(**_env(xs, ys))

    spec = MetricSpec(n=n, kind=kind, func=func, params={"expr": expr},
                      domain_radius=domain_radius, x_free=x_free)
    return validate_metric(spec) if validate else spec


def validate_metric(spec, samples=64, seed=0):
    """Sampled checks of positivity, homogeneity and convexity."""
    rng = np.random.default_rng(seed)
    x = spec.sample_points(rng, samples)
    y = rng.normal(size=(samples, spec.n))
    with np.errstate(all="ignore"):
        F = spec.F(x, y)
    if not np.all(np.isfinite(F)) or np.min(F) <= 0:
        k = int(np.argmin(np.where(np.isfinite(F), F, -np.inf)))
        raise NonPositiveMetricError(
            f"F is not positive at sample x={x[k].tolist()}, y={y[k].tolist()}")
    res = 0.0
    for k in (0.5, 2.0, 10.0):
        Fk = spec.F(x, k * y)
        res = max(res, float(np.max(np.abs(Fk - k * F) / (k * F))))
    if res > 1e-8:
        raise HomogeneityError(f"F is not positively 1-homogeneous in y "
                               f"(relative residual {res:.3e})")
    g = _g_only(spec, x, y)
    ev = np.linalg.eigvalsh(g)
    scale = np.max(np.abs(ev), axis=-1)
    if np.any(ev[..., 0] <= 1e-12 * scale):
        k = int(np.argmin(ev[..., 0] / scale))
        raise DegenerateMetricError(
            f"fundamental tensor not positive definite at x={x[k].tolist()}, "
            f"y={y[k].tolist()}")
    cert = Certificate(samples=samples, homogeneity_residual=res,
                       min_eigenvalue=float(ev[..., 0].min()), min_F=float(F.min()))
    return replace(spec, certificate=cert)


# tensors -------------------------------------------------------------------

@dataclass(frozen=True)
class FundamentalData:
    g: np.ndarray
    g_inv: np.ndarray
    cartan: np.ndarray
    mean_cartan: np.ndarray


def _check(spec, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    if x.shape[-1] != spec.n:
        raise MetricError(f"expected {spec.n}-dimensional points")
    ny = np.linalg.norm(y, axis=-1)
    scale = np.maximum(1.0, np.linalg.norm(x, axis=-1))
    if np.any(ny < ZERO_TOL * scale):
        raise ZeroVectorError("tensor quantities need a nonzero direction y")
    if not np.all(spec.in_domain(x)):
        raise DomainError("point outside the metric's domain")
    return x, y


def f2_jet(spec, x, y, X, Y, T):
    """Jet of F**2 at (x, y) for the given profile."""
    xs, ys = J.seed(x, y, X, Y, T)
    F = spec.func(xs, ys)
    if not isinstance(F, J.Jet):
        F = J.Jet.constant(J.basis(spec.n, X, Y, T), F)
    return F * F, xs, ys


def _hess_y(F2, n):
    return np.stack([np.stack([F2.partial(_e(n, n + i, n + j)) for j in range(n)], -1)
                     for i in range(n)], -2)


def _e(n, *vars_):
    m = [0] * (2 * n)
    for v in vars_:
        m[v] += 1
    return tuple(m)


def _g_only(spec, x, y):
    F2, _, _ = f2_jet(spec, x, y, 0, 2, 2)
    return 0.5 * _hess_y(F2, spec.n)


def fundamental(spec, x, y) -> FundamentalData:
    """g_ij, g^ij, Cartan C_ijk and mean Cartan I_k at (x, y)."""
    x, y = _check(spec, x, y)
    n = spec.n
    F2, _, _ = f2_jet(spec, x, y, 0, 3, 3)
    g = 0.5 * _hess_y(F2, n)
    g = 0.5 * (g + np.swapaxes(g, -1, -2))
    ev = np.linalg.eigvalsh(g)
    if np.any(ev[..., 0] <= 1e-12 * np.abs(ev[..., -1])):
        raise DegenerateMetricError("fundamental tensor is not positive definite")
    ginv = np.linalg.inv(g)
    C = np.empty(x.shape[:-1] + (n, n, n))
    for i in range(n):
        for j in range(n):
            for k in range(n):
                C[..., i, j, k] = 0.25 * F2.partial(_e(n, n + i, n + j, n + k))
    I = np.einsum("...ij,...ijk->...k", ginv, C)
    return FundamentalData(g=g, g_inv=ginv, cartan=C, mean_cartan=I)


def metric_tensor(spec, x, y):
    """g_ij(x, y) only (cheaper than :func:`fundamental`)."""
    x, y = _check(spec, x, y)
    return _g_only(spec, x, y)


def angular_metric(spec, x, y, u, v):
    """h_y(u, v) = g_y(u, v) - g_y(y, u) g_y(y, v) / F(y)^2."""
    x, y = _check(spec, x, y)
    g = _g_only(spec, x, y)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    F2 = spec.F(x, y) ** 2
    guv = np.einsum("...i,...ij,...j->...", u, g, v)
    gyu = np.einsum("...i,...ij,...j->...", y, g, u)
    gyv = np.einsum("...i,...ij,...j->...", y, g, v)
    return guv - gyu * gyv / F2


# duality -------------------------------------------------------------------

def _l_and_g(spec, x, y):
    F2, _, _ = f2_jet(spec, x, y, 0, 2, 2)
    n = spec.n
    l = 0.5 * np.stack([F2.partial(_e(n, n + i)) for i in range(n)], -1)
    g = 0.5 * _hess_y(F2, n)
    return l, g


def to_cotangent(spec, x, y):
    """Legendre map l(y) = g_y(y, .)."""
    x, y = _check(spec, x, y)
    F2, _, _ = f2_jet(spec, x, y, 0, 1, 1)
    n = spec.n
    return 0.5 * np.stack([F2.partial(_e(n, n + i)) for i in range(n)], -1)


def _dual_grad(spec, x, xi):
    """Closed-form inverse Legendre map: d(F*^2/2)/d(xi) and F*."""
    if spec.dual_parts is not None:
        # Randers family: F* = (sqrt(lam |xi|^2_{a*} + <xi, b#>^2) - <xi, b#>) / lam
        ainv, bs, lam = spec.dual_parts(np.broadcast_to(x, xi.shape))
        axi = np.einsum("...ij,...j->...i", ainv, xi)
        zb = np.einsum("...i,...i->...", xi, bs)
        S = np.sqrt(lam * np.einsum("...i,...i->...", xi, axi) + zb * zb)
        H = (S - zb) / lam
        dH = ((lam[..., None] * axi + zb[..., None] * bs) / S[..., None] - bs) / lam[..., None]
        return H[..., None] * dH, H
    _, zs = J.seed(x, xi, 0, 1, 1)
    xs = _split(np.broadcast_to(x, np.broadcast_shapes(x.shape, xi.shape)))
    H = spec.dual_func(xs, zs)
    H2 = H * H
    n = spec.n
    y = 0.5 * np.stack([H2.partial(_e(n, n + i)) for i in range(n)], -1)
    return y, H.value


def to_tangent(spec, x, xi, y0=None, method="auto", tol=1e-12, max_iter=100,
               raise_on_fail=True):
    """Solve l(y) = xi.  Returns ``(y, Fstar)`` (plus a failure mask when
    ``raise_on_fail`` is False).

    With ``method='auto'`` a closed-form dual is used when the metric family
    provides one; otherwise (or with ``method='newton'``) a damped Newton
    iteration is run from ``y0`` or from g(x, xi)^{-1} xi.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    x, xi = np.broadcast_arrays(x, xi)
    nxi = np.linalg.norm(xi, axis=-1)
    if np.any(nxi < ZERO_TOL):
        raise ZeroVectorError("Legendre inversion needs a nonzero covector")
    if not np.all(spec.in_domain(x)):
        raise DomainError("point outside the metric's domain")
    if method == "auto" and spec.dual_func is not None:
        y, Fs = _dual_grad(spec, x, xi)
        return (y, Fs) if raise_on_fail else (y, Fs, np.zeros(nxi.shape, bool))
    y, failed = _newton(spec, x, xi, y0, tol, max_iter)
    if raise_on_fail and np.any(failed):
        raise LegendreError(f"Newton inversion did not converge at {int(failed.sum())} "
                            f"point(s) within {max_iter} iterations")
    Fs = spec.F(x, y)
    return (y, Fs) if raise_on_fail else (y, Fs, failed)


def _newton(spec, x, xi, y0, tol, max_iter):
    shape = xi.shape[:-1]
    nxi = np.linalg.norm(xi, axis=-1)
    if y0 is None:
        g0 = _g_only(spec, x, xi)
        y = np.linalg.solve(g0, xi[..., None])[..., 0]
    else:
        y = np.array(np.broadcast_to(y0, xi.shape), dtype=float)
        bad = np.linalg.norm(y, axis=-1) < ZERO_TOL
        if np.any(bad):
            g0 = _g_only(spec, x[bad], xi[bad])
            y[bad] = np.linalg.solve(g0, xi[bad][..., None])[..., 0]
    y = y.reshape(-1, spec.n)
    X = x.reshape(-1, spec.n)
    Xi = xi.reshape(-1, spec.n)
    nx = nxi.reshape(-1)
    active = np.arange(len(y))
    failed = np.zeros(len(y), dtype=bool)
    l, g = _l_and_g(spec, X, y)
    res = np.linalg.norm(l - Xi, axis=-1)
    for _ in range(max_iter):
        conv = res[active] <= tol * nx[active]
        active = active[~conv]
        if active.size == 0:
            break
        ya, xa, xia = y[active], X[active], Xi[active]
        step = np.linalg.solve(g[active], (l[active] - xia)[..., None])[..., 0]
        r0 = res[active]
        s = np.ones(active.size)
        pending = np.ones(active.size, dtype=bool)
        new_y = ya.copy()
        new_l = l[active].copy()
        new_g = g[active].copy()
        new_r = r0.copy()
        for _h in range(31):
            idx = np.flatnonzero(pending)
            cand = ya[idx] - s[idx, None] * step[idx]
            lc, gc = _l_and_g(spec, xa[idx], cand)
            rc = np.linalg.norm(lc - xia[idx], axis=-1)
            ok = np.isfinite(rc) & (rc < r0[idx]) & np.all(np.isfinite(gc), axis=(-1, -2))
            acc = idx[ok]
            new_y[acc], new_l[acc], new_g[acc], new_r[acc] = cand[ok], lc[ok], gc[ok], rc[ok]
            pending[acc] = False
            if not pending.any():
                break
            s[pending] *= 0.5
        stuck = pending
        if np.any(stuck):
            failed[active[stuck]] = True
        y[active], l[active], g[active], res[active] = new_y, new_l, new_g, new_r
        active = active[~stuck]
    else:
        if active.size:
            failed[active[res[active] > tol * nx[active]]] = True
    return y.reshape(xi.shape), failed.reshape(shape)


def legendre(spec, x, v, direction="to_cotangent", **kw):
    if direction == "to_cotangent":
        return to_cotangent(spec, x, v)
    if direction == "to_tangent":
        return to_tangent(spec, x, v, **kw)
    raise ValueError("direction must be 'to_cotangent' or 'to_tangent'")


def dual_norm(spec, x, xi, **kw):
    """F*(x, xi) = F(x, l^{-1}(xi)); zero covectors map to 0."""
    xi = np.asarray(xi, dtype=float)
    x = np.asarray(x, dtype=float)
    x, xi = np.broadcast_arrays(x, xi)
    out = np.zeros(xi.shape[:-1])
    nz = np.linalg.norm(xi, axis=-1) >= ZERO_TOL
    if np.any(nz):
        _, Fs = to_tangent(spec, x[nz], xi[nz], **kw)
        out[nz] = Fs
    return out


def norm(spec, x, y):
    """F(x, y) with F(x, 0) = 0."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    x, y = np.broadcast_arrays(x, y)
    out = np.zeros(y.shape[:-1])
    nz = np.linalg.norm(y, axis=-1) >= ZERO_TOL
    if np.any(nz):
        out[nz] = spec.F(x[nz], y[nz])
    return out


def unit_directions(spec, x, angles):
    """Indicatrix points at Euclidean angles (n = 2), rescaled to F = 1."""
    x = np.asarray(x, dtype=float)
    e = np.stack([np.cos(angles), np.sin(angles)], -1)
    x, e = np.broadcast_arrays(x, e)
    return e / spec.F(x, e)[..., None]


# measures ------------------------------------------------------------------

@dataclass(frozen=True)
class MeasureSpec:
    """dmu = exp(phi(x)) dx."""

    kind: str
    phi_func: Optional[Callable] = field(default=None, repr=False)
    params: dict = field(default_factory=dict, compare=False)

    def phi(self, xs):
        if self.phi_func is None:
            return 0.0
        return self.phi_func(xs)

    def phi_array(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.phi(_split(x)), dtype=float), x.shape[:-1])

    def sigma(self, x):
        return np.exp(self.phi_array(x))

    def shifted(self, c):
        """Density multiplied by e^c."""
        f = self.phi_func
        return replace(self, kind=f"{self.kind}+const",
                       phi_func=lambda xs: (0.0 if f is None else f(xs)) + c)


def lebesgue():
    return MeasureSpec(kind="lebesgue")


def measure_expression(expr, n):
    e = Expression(expr, [f"x{i + 1}" for i in range(n)])
    return MeasureSpec(kind="expression", params={"phi": expr},
                       phi_func=lambda xs: e(**{f"x{i + 1}": v for i, v in enumerate(xs)}))


def riemannian_volume(a, n=None):
    """Volume density sqrt(det a(x)) of a Riemannian metric a_ij(x)."""
    n = len(a)
    A = [[_coef(a[i][j], n) for j in range(n)] for i in range(n)]

    def phi(xs):
        m = [[_at(A[i][j], xs) for j in range(n)] for i in range(n)]
        if n == 2:
            d = m[0][0] * m[1][1] - m[0][1] * m[1][0]
        else:
            d = _det(m)
        return 0.5 * J.log(d)

    return MeasureSpec(kind="riemannian-volume", phi_func=phi, params={"a": a})


def _det(m):
    n = len(m)
    if n == 1:
        return m[0][0]
    total = 0.0
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        term = m[0][j] * _det(minor)
        total = total + term if j % 2 == 0 else total - term
    return total


# config ----------------------------------------------------------------------

METRIC_KEYS = {"kind", "n", "expr", "domain_radius"}


def metric_from_config(section):
    """Build a metric from an INI-style mapping ([metric] section)."""
    sec = dict(section)
    kind = sec.get("kind", "euclidean").strip()
    n = int(sec.get("n", 2))
    allowed = set(METRIC_KEYS)
    allowed |= {f"a{i + 1}{j + 1}" for i in range(n) for j in range(n)}
    allowed |= {f"b{i + 1}" for i in range(n)}
    unknown = set(sec) - allowed
    if unknown:
        raise MetricError(f"[metric] unknown key(s): {', '.join(sorted(unknown))}")
    dr = sec.get("domain_radius")
    dr = float(dr) if dr not in (None, "") else None
    try:
        if kind == "euclidean":
            return euclidean(n)
        if kind == "poincare-disk":
            return poincare_disk()
        if kind == "funk-disk":
            return funk_disk(n)
        if kind in ("riemannian", "randers"):
            a = [[_matrix_entry(sec, i, j) for j in range(n)] for i in range(n)]
            if kind == "riemannian":
                return riemannian(a, domain_radius=dr)
            b = [sec.get(f"b{i + 1}", "0") for i in range(n)]
            return randers(a, b, domain_radius=dr)
        if kind in ("minkowski", "expression"):
            if "expr" not in sec:
                raise MetricError(f"[metric] kind={kind} requires expr=")
            return parse_metric(sec["expr"], n, kind=kind, domain_radius=dr)
    except ExpressionError as err:
        raise MetricError(f"[metric] {err}") from err
    raise MetricError(f"[metric] unknown kind {kind!r}")


def _matrix_entry(sec, i, j):
    k1, k2 = f"a{i + 1}{j + 1}", f"a{j + 1}{i + 1}"
    if k1 in sec:
        return sec[k1]
    if k2 in sec:
        return sec[k2]
    return "1" if i == j else "0"


MEASURE_KEYS = {"kind", "phi"}


def measure_from_config(section, metric=None):
    sec = dict(section or {})
    unknown = set(sec) - MEASURE_KEYS
    if unknown:
        raise MetricError(f"[measure] unknown key(s): {', '.join(sorted(unknown))}")
    kind = sec.get("kind", "lebesgue").strip()
    if kind == "lebesgue":
        return lebesgue()
    if kind == "expression":
        if "phi" not in sec:
            raise MetricError("[measure] kind=expression requires phi=")
        try:
            return measure_expression(sec["phi"], metric.n if metric else 2)
        except ExpressionError as err:
            raise MetricError(f"[measure] {err}") from err
    if kind == "riemannian-volume":
        if metric is None or metric.kind not in ("riemannian", "euclidean", "randers"):
            raise MetricError("[measure] riemannian-volume needs a riemannian/randers metric")
        return riemannian_volume(metric.params["a"])
    raise MetricError(f"[measure] unknown kind {kind!r}")
