"""Li-Yau quantities computed from solver snapshots, the compact and local
gradient estimates, and the Harnack inequality with a path-action search.

All pointwise checks work on grid nodes.  f = log u, its differential by
central differences and F(grad f) through the Legendre inverse; the reverse
branch uses F(x, -grad f).  Box and ball grids lose a buffer of cells next to
the boundary, tori use every node.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.optimize import minimize
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .comparison import curvature_lower_bound, distance_field
from .grid import FieldGrid
from .metric import ZERO_TOL, _e, f2_jet, to_tangent
from .pde import PotentialSpec
from .regions import Ball, Box

__all__ = [
    "EstimateError", "EstimateParams", "LiYauSeries", "li_yau_H", "VerificationReport",
    "measure_inputs", "check_compact_N", "check_compact_inf", "check_noncompact",
    "HarnackReport", "harnack_check", "random_pairs", "root_term",
]

BUFFER = 3


class EstimateError(ValueError):
    pass


@dataclass(frozen=True)
class EstimateParams:
    """Inputs of the estimates.  eps defaults to 2(beta-1)/beta^2.

    K, K_prime, gamma, theta and q_minus left as None are measured by the
    checks (or taken as 0 when measurement is switched off); given values
    that understate the measured ones are flagged.
    """

    N: float
    beta: float = 2.0
    eps: float | None = None
    K: float | None = None
    K_prime: float | None = None
    K0: float = 0.0
    alpha: float = 1.0
    gamma: float | None = None
    theta: float | None = None
    q_minus: float | None = None
    R: float | None = None
    T: float | None = None
    L: float | None = None
    C3: float | None = None
    C: float | None = None
    C_N: float | None = None

    def __post_init__(self):
        if not self.beta > 1:
            raise EstimateError("beta must exceed 1")
        if self.eps is None:
            object.__setattr__(self, "eps", 2 * (self.beta - 1) / self.beta ** 2)
        if not 0 < self.eps < 1:
            raise EstimateError("eps must lie in (0, 1)")
        for name in ("K", "K_prime", "gamma", "q_minus"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise EstimateError(f"{name} must be nonnegative")

    def filled(self):
        """Copy with unset hypotheses replaced by 0."""
        return replace(self, **{k: 0.0 for k in _HYP if getattr(self, k) is None})


_HYP = ("K", "K_prime", "gamma", "theta", "q_minus")


def root_term(N, beta, eps, K, gamma, theta):
    """The square-root term of the N-dimensional estimate (theta clipped at 0)."""
    th = max(float(theta), 0.0)
    s = (0.75 * ((beta - 1) ** 2 * beta ** 8 * gamma ** 4 / (4 * eps)) ** (1 / 3)
         + N ** 2 * beta ** 4 * K ** 2 / (4 * (1 - eps) * (beta - 1) ** 2)
         + 0.5 * N * beta ** 3 * th)
    return float(np.sqrt(s))


# the Li-Yau quantity -----------------------------------------------------------

@dataclass
class LiYauSeries:
    times: np.ndarray
    H: list                 # t (F^2(grad f) - beta f_t - beta q)
    H_rev: list             # same with F^2(-grad f)
    F: list                 # F(grad f)
    F_rev: list             # F(-grad f)
    ft: list
    q: list
    mask: np.ndarray        # nodes where the quantities are evaluated
    beta: float


def _eval_mask(grid: FieldGrid, buffer=BUFFER):
    k1, k2 = grid.shape
    if grid.domain == "torus":
        return np.ones((k1, k2), bool)
    m = np.zeros((k1, k2), bool)
    m[buffer:k1 - buffer, buffer:k2 - buffer] = True
    if grid.domain == "ball":
        d = np.linalg.norm(grid.points - np.asarray(grid.center), axis=-1)
        m &= d <= grid.radius - buffer * grid.h
    return m


def _differential(grid: FieldGrid, f):
    h = grid.h
    if grid.domain == "torus":
        d1 = (np.roll(f, -1, 0) - np.roll(f, 1, 0)) / (2 * h)
        d2 = (np.roll(f, -1, 1) - np.roll(f, 1, 1)) / (2 * h)
        return np.stack([d1, d2], -1)
    d = np.full(f.shape + (2,), np.nan)
    d[1:-1, :, 0] = (f[2:] - f[:-2]) / (2 * h)
    d[:, 1:-1, 1] = (f[:, 2:] - f[:, :-2]) / (2 * h)
    return d


def _gradient_norms(spec, grid, f, mask):
    """F(grad f) and F(-grad f) on the masked nodes (NaN elsewhere)."""
    df = _differential(grid, f)
    Fp = np.full(f.shape, np.nan)
    Fm = np.full(f.shape, np.nan)
    Fp[mask] = 0.0
    Fm[mask] = 0.0
    nz = mask & (np.linalg.norm(np.nan_to_num(df), axis=-1) >= ZERO_TOL)
    if np.any(nz):
        x = grid.points[nz]
        y, Fs = to_tangent(spec, x, df[nz])
        Fp[nz] = Fs
        Fm[nz] = spec.F(x, -y)
    return Fp, Fm


def _time_derivative(logs, times):
    """Second-order three-point derivative at the interior snapshots."""
    out = [None] * len(logs)
    for k in range(1, len(logs) - 1):
        h1 = times[k] - times[k - 1]
        h2 = times[k + 1] - times[k]
        out[k] = (-h2 / (h1 * (h1 + h2)) * logs[k - 1] + (h2 - h1) / (h1 * h2) * logs[k]
                  + h1 / (h2 * (h1 + h2)) * logs[k + 1])
    return out


def li_yau_H(spec, snapshots, q=None, beta=1.0, ut=None, buffer=BUFFER):
    """H = t (F^2(grad f) - beta f_t - beta q), f = log u, for every snapshot
    where f_t is available.

    f_t is u_t / u when the solver's time derivatives ``ut`` are passed, else
    the centered (three-point) difference of log u between adjacent
    snapshots, so the first and last snapshots drop out.  The time variable
    is the snapshot's ``t``.
    """
    if not snapshots:
        raise EstimateError("no snapshots")
    grid = snapshots[0]
    q = q or PotentialSpec("0", spec.n)
    times = np.array([s.t for s in snapshots], dtype=float)
    mask = _eval_mask(grid, buffer) & grid.active()
    logs = []
    for s in snapshots:
        u = np.asarray(s.values, dtype=float)
        if np.any(~(u[s.active()] > 0)):
            raise EstimateError(f"u must be positive (snapshot t = {s.t:g})")
        with np.errstate(divide="ignore", invalid="ignore"):
            logs.append(np.where(s.active(), np.log(np.where(u > 0, u, 1.0)), np.nan))
    if ut is not None:
        fts = [np.asarray(d.values, float) / np.asarray(s.values, float)
               for d, s in zip(ut, snapshots)]
    else:
        if np.any(np.diff(times) <= 0):
            raise EstimateError("snapshot times must increase")
        fts = _time_derivative(logs, times)
    out = LiYauSeries(times=np.array([]), H=[], H_rev=[], F=[], F_rev=[], ft=[], q=[],
                      mask=mask, beta=float(beta))
    keep = []
    pts = grid.points
    for k, s in enumerate(snapshots):
        if fts[k] is None:
            continue
        Fp, Fm = _gradient_norms(spec, grid, logs[k], mask)
        qq = np.asarray(q(pts, s.t), dtype=float)
        ft = np.where(mask, fts[k], np.nan)
        t = s.t
        out.H.append(s.with_values(t * (Fp ** 2 - beta * ft - beta * qq)))
        out.H_rev.append(s.with_values(t * (Fm ** 2 - beta * ft - beta * qq)))
        out.F.append(s.with_values(Fp))
        out.F_rev.append(s.with_values(Fm))
        out.ft.append(s.with_values(ft))
        out.q.append(qq)
        keep.append(t)
    out.times = np.array(keep)
    return out


# reports -------------------------------------------------------------------------

@dataclass
class Entry:
    quantity: str
    min_margin: float
    violations: int
    empirical_constant: float | None = None
    evaluated: int = 0


@dataclass
class VerificationReport:
    entries: list
    params: EstimateParams
    locations: list = field(default_factory=list)     # (quantity, x1, x2, t, margin)
    warnings: list = field(default_factory=list)
    margins: list = field(default_factory=list)       # FieldGrid per checked snapshot
    regime: str = ""

    @property
    def violations(self):
        return int(sum(e.violations for e in self.entries))

    @property
    def min_margin(self):
        vals = [e.min_margin for e in self.entries if np.isfinite(e.min_margin)]
        return float(min(vals)) if vals else float("nan")

    @property
    def empirical_constant(self):
        for e in self.entries:
            if e.empirical_constant is not None:
                return e.empirical_constant
        return None

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["quantity", "min_margin", "violations", "empirical_constant"])
            for e in self.entries:
                c = "" if e.empirical_constant is None else f"{e.empirical_constant:.10g}"
                w.writerow([e.quantity, f"{e.min_margin:.10g}", e.violations, c])

    def summary(self):
        lines = []
        for e in self.entries:
            c = "" if e.empirical_constant is None else f" empirical_constant={e.empirical_constant:.6g}"
            lines.append(f"{e.quantity}: evaluated={e.evaluated} min_margin={e.min_margin:.6g} "
                         f"violations={e.violations}{c}")
        if self.regime:
            lines.append(f"regime: {self.regime}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        for (qty, x1, x2, t, m) in self.locations[:20]:
            lines.append(f"violation {qty} at x=({x1:.6g}, {x2:.6g}) t={t:.6g} margin={m:.6g}")
        if len(self.locations) > 20:
            lines.append(f"... {len(self.locations) - 20} more violation(s)")
        return "\n".join(lines)


def _collect(quantity, grids, margins, tol, report):
    """Reduce margin fields into an Entry; violation locations are appended."""
    mins, viol, count = [], 0, 0
    for g, m in zip(grids, margins):
        ok = np.isfinite(m)
        count += int(ok.sum())
        if not np.any(ok):
            continue
        mins.append(float(m[ok].min()))
        bad = ok & (m < -tol(g))
        viol += int(bad.sum())
        pts = g.points
        for (i, j) in zip(*np.nonzero(bad)):
            report.locations.append((quantity, float(pts[i, j, 0]), float(pts[i, j, 1]),
                                     float(g.t), float(m[i, j])))
        report.margins.append(g.with_values(m))
    e = Entry(quantity, float(min(mins)) if mins else float("nan"), viol, None, count)
    report.entries.append(e)
    return e


# measured hypotheses -----------------------------------------------------------

_MODES = {"K_N": "weighted", "K_inf": "weighted_inf", "K_mixed": "mixed",
          "K_mixed_inf": "infty_variant"}


def measure_inputs(spec, measure, region, N, q=None, times=(0.0,), samples=600, seed=0,
                   points=None, curvatures=tuple(_MODES)):
    """Sampled hypotheses of the estimates over ``region``.

    Returns a dict with K_N (-inf Ric^N), K_inf (-inf Ric^inf), K_mixed
    (-inf of the mixed curvature with index N), K_mixed_inf and S_bound (sup |S|)
    for the mixed curvature with index infinity, gamma, theta, q_minus, plus
    the curvature witnesses.  ``curvatures`` selects the curvature keys.
    """
    q = q or PotentialSpec("0", spec.n)
    out = {}
    wit = {}
    for key in curvatures:
        mode = _MODES[key]
        cb = curvature_lower_bound(spec, measure, region, N, mode, samples=samples, seed=seed)
        out[key] = max(0.0, -cb.inf_value) + cb.tolerance
        wit[key] = np.asarray(cb.witness[0], dtype=float)
        if mode == "infty_variant":
            out["S_bound"] = cb.S_bound
    if points is None:
        points = region.grid(33) if hasattr(region, "grid") else region.sample(
            np.random.default_rng(seed), 1024)
    points = points[spec.in_domain(points)]
    ts = tuple(times) if q.time_dependent else (0.0,)
    if q.is_constant:
        out["gamma"], out["theta"] = 0.0, 0.0
    else:
        out["gamma"], out["theta"] = q.bounds(spec, measure, points, times=ts)
    qmin = min(float(np.min(q(points, t))) for t in ts)
    out["q_minus"] = max(0.0, -qmin)
    out["witness"] = wit
    return out


def _reconcile(params, measured, keys, report):
    """Raise understated hypotheses to the measured value; each understatement
    is a flagged violation."""
    upd = {}
    for pkey, mkey in keys:
        given = getattr(params, pkey)
        meas = float(measured[mkey])
        if given is None:
            upd[pkey] = meas
            continue
        tol = 1e-9 * max(1.0, abs(meas))
        ok = given >= meas - tol
        report.entries.append(Entry(f"hypothesis_{pkey}", given - meas, 0 if ok else 1, None, 1))
        if not ok:
            w = measured.get("witness", {}).get(mkey)
            if w is not None:
                report.locations.append((f"hypothesis_{pkey}", float(w[0]), float(w[1]),
                                         float("nan"), given - meas))
            report.warnings.append(f"{pkey} = {given:g} understates the measured value "
                                   f"{meas:g}; the measured value is used")
            warnings.warn(f"{pkey} understated; using the measured value {meas:g}")
            upd[pkey] = meas
    return (replace(params, **upd) if upd else params).filled()


def torus_region(grid):
    lo = np.asarray(grid.lo, dtype=float)
    return Box(tuple(lo), tuple(lo + np.asarray(grid.periods)))


def _window(times, t_window):
    lo, hi = t_window if t_window is not None else (-np.inf, np.inf)
    return (times >= lo - 1e-12) & (times <= hi + 1e-12)


def _rel_tol(scale):
    return 1e-8 * max(1.0, float(np.nanmax(np.abs(scale))) if np.size(scale) else 1.0)


# compact estimates ---------------------------------------------------------------

def check_compact_N(spec, measure, snapshots, params: EstimateParams, q=None, ut=None,
                    t_window=(0.1, 1.0), measure_hypotheses=True, samples=600, seed=0):
    """sup{F^2(+-grad u)/u^2 - beta u_t/u - beta q} <= N beta^2/(2t) + root term
    at every node and snapshot in the window (torus only)."""
    grid = snapshots[0]
    if grid.domain != "torus":
        raise EstimateError("the compact estimates need a torus grid")
    q = q or PotentialSpec("0", spec.n)
    report = VerificationReport(entries=[], params=params)
    if measure_hypotheses:
        meas = measure_inputs(spec, measure, torus_region(grid), params.N, q,
                              [s.t for s in snapshots], samples, seed, grid.points.reshape(-1, 2),
                              ("K_N",))
        params = _reconcile(params, meas, (("K", "K_N"), ("gamma", "gamma"),
                                           ("theta", "theta")), report)
    params = params.filled()
    report.params = params
    b = params.beta
    series = li_yau_H(spec, snapshots, q, b, ut)
    B = root_term(params.N, b, params.eps, params.K, params.gamma, params.theta)
    sel = _window(series.times, t_window)
    grids, margins = [], []
    for k in np.nonzero(sel)[0]:
        t = series.times[k]
        lhs = np.fmax(series.H[k].values, series.H_rev[k].values) / t
        rhs = params.N * b ** 2 / (2 * t) + B
        grids.append(series.H[k])
        margins.append(rhs - lhs)
    _collect("li_yau_compact_N", grids, margins, lambda g: _rel_tol(params.N * b ** 2 / g.t + B),
             report)
    return report


def check_compact_inf(spec, measure, snapshots, params: EstimateParams, q=None,
                      t_window=None, near_constant_tol=1e-3, measure_hypotheses=True,
                      samples=600, seed=0):
    """F(+-grad u)/u <= sqrt2 (K^1/2 + |q^-|^1/2 + gamma^1/3)(1 + log(L/u)).

    When the coefficient vanishes the inequality only admits constants; the
    check then asserts LHS <= near_constant_tol on the window instead.
    """
    grid = snapshots[0]
    if grid.domain != "torus":
        raise EstimateError("the compact estimates need a torus grid")
    q = q or PotentialSpec("0", spec.n)
    report = VerificationReport(entries=[], params=params)
    sup_u = max(float(np.max(s.values)) for s in snapshots)
    L = params.L if params.L is not None else sup_u
    if L < sup_u * (1 - 1e-12):
        raise EstimateError(f"L = {L:g} is below sup u = {sup_u:g}")
    if measure_hypotheses:
        meas = measure_inputs(spec, measure, torus_region(grid), params.N, q,
                              [s.t for s in snapshots], samples, seed, grid.points.reshape(-1, 2),
                              ("K_inf",))
        params = _reconcile(params, meas, (("K", "K_inf"), ("gamma", "gamma"),
                                           ("q_minus", "q_minus")), report)
    params = replace(params.filled(), L=L)
    report.params = params
    coef = np.sqrt(2) * (np.sqrt(params.K) + np.sqrt(params.q_minus) + params.gamma ** (1 / 3))
    mask = _eval_mask(grid) & grid.active()
    times = np.array([s.t for s in snapshots])
    sel = _window(times, t_window)
    grids, margins = [], []
    for k in np.nonzero(sel)[0]:
        s = snapshots[k]
        u = np.asarray(s.values, float)
        if np.any(u[mask] <= 0):
            raise EstimateError("u must be positive")
        Fp, Fm = _gradient_norms(spec, grid, np.log(np.where(u > 0, u, 1.0)), mask)
        lhs = np.fmax(Fp, Fm)
        if coef > 0:
            margins.append(coef * (1 + np.log(L / u)) - lhs)
        else:
            margins.append(near_constant_tol - lhs)
        grids.append(s)
    name = "gradient_compact_inf"
    if coef > 0:
        report.regime = f"coefficient {coef:.6g}"
    else:
        report.regime = f"vanishing coefficient: near-constant check at tolerance {near_constant_tol:g}"
        name += "_near_constant"
    _collect(name, grids, margins, lambda g: 1e-10, report)
    return report


# local estimates on balls ------------------------------------------------------

def forward_distance(spec, measure, grid, p):
    """Forward distance from p on the grid's nodes (NaN where unreached)."""
    k = grid.shape[0]
    lo = np.asarray(grid.lo, dtype=float)
    hi = lo + grid.h * (k - 1)
    df = distance_field(spec, measure, p, lo, hi, k)
    return df.r


def check_noncompact(spec, measure, snapshots, params: EstimateParams, p, which="N", q=None,
                     ut=None, r=None, t_window=None, measure_hypotheses=True, samples=600,
                     seed=0):
    """Local estimates on the forward ball B(p, R) with an empirical constant.

    which='N':   sup{F^2(+-grad u)/u^2 - beta u_t/u - beta q} - N beta^2/(2t) - root
                 <= C3 beta^2 R^-2 (1 + R + R sqrt K + beta^2/(beta-1))
    which='inf': F(+-grad u)/u <= C (1 + log(L/u)) [1/R + 1/sqrt R + 1/sqrt T + sqrt K
                 + sqrt K' + |q^-|^1/2 + gamma^1/3],  L = sup u over B(p, 2R) x window.

    The empirical constant is the smallest C3 (resp. C) making the inequality
    hold on every evaluated node; with params.C3 (resp. C) set the inequality
    is also checked with that value.
    """
    if which not in ("N", "inf"):
        raise EstimateError("which must be 'N' or 'inf'")
    if params.R is None or params.R <= 0:
        raise EstimateError("the local estimates need R > 0")
    grid = snapshots[0]
    q = q or PotentialSpec("0", spec.n)
    R = float(params.R)
    report = VerificationReport(entries=[], params=params)
    p = np.asarray(p, dtype=float)
    if r is None:
        r = forward_distance(spec, measure, grid, p)
    if measure_hypotheses:
        if grid.domain == "ball":
            region = Ball(tuple(grid.center), float(grid.radius))
        else:
            lo = np.asarray(grid.lo)
            region = Box(tuple(lo), tuple(lo + grid.h * (np.asarray(grid.shape) - 1)))
        meas = measure_inputs(spec, measure, region, params.N, q, [s.t for s in snapshots],
                              samples, seed,
                              curvatures=("K_mixed",) if which == "N" else ("K_mixed_inf",))
        keys = [("gamma", "gamma"), ("q_minus", "q_minus")]
        if which == "N":
            keys += [("K", "K_mixed"), ("theta", "theta")]
        else:
            meas["K_mixed_inf_raw"] = max(0.0, meas["K_mixed_inf"]
                                          - meas["S_bound"] ** 2 / (params.N - spec.n))
            keys += [("K", "K_mixed_inf_raw"), ("K_prime", "S_bound")]
        params = _reconcile(params, meas, keys, report)
    params = params.filled()
    report.params = params
    inner = np.isfinite(r) & (r < R) & _eval_mask(grid) & grid.active()
    outer = np.isfinite(r) & (r < 2 * R) & grid.active()
    times = np.array([s.t for s in snapshots])
    b = params.beta
    grids, ratios, margins = [], [], []
    if which == "N":
        series = li_yau_H(spec, snapshots, q, b, ut)
        sel = _window(series.times, t_window)
        B = root_term(params.N, b, params.eps, params.K, params.gamma, params.theta)
        D = b ** 2 / R ** 2 * (1 + R + R * np.sqrt(params.K) + b ** 2 / (b - 1))
        for k in np.nonzero(sel)[0]:
            t = series.times[k]
            lhs = np.fmax(series.H[k].values, series.H_rev[k].values) / t
            excess = np.where(inner, lhs - params.N * b ** 2 / (2 * t) - B, np.nan)
            grids.append(series.H[k])
            ratios.append(excess / D)
            if params.C3 is not None:
                margins.append(params.C3 - excess / D)
        name, given = "li_yau_noncompact_N", params.C3
    else:
        sel = _window(times, t_window)
        idx = np.nonzero(sel)[0]
        if len(idx) == 0:
            raise EstimateError("no snapshot in the time window")
        T = params.T if params.T is not None else float(times[idx[-1]] - times[idx[0]])
        if T <= 0:
            raise EstimateError("the local gradient estimate needs T > 0")
        sup_u = max(float(np.max(snapshots[k].values[outer])) for k in idx)
        L = params.L if params.L is not None else sup_u
        if L < sup_u * (1 - 1e-12):
            raise EstimateError(f"L = {L:g} is below sup u = {sup_u:g} on the window")
        params = replace(params, L=L, T=T)
        report.params = params
        bracket = (1 / R + 1 / np.sqrt(R) + 1 / np.sqrt(T) + np.sqrt(params.K)
                   + np.sqrt(params.K_prime) + np.sqrt(params.q_minus) + params.gamma ** (1 / 3))
        mask = inner
        for k in idx:
            s = snapshots[k]
            u = np.asarray(s.values, float)
            Fp, Fm = _gradient_norms(spec, grid, np.log(np.where(u > 0, u, 1.0)), mask)
            lhs = np.fmax(Fp, Fm)
            ratio = np.where(mask, lhs / ((1 + np.log(L / u)) * bracket), np.nan)
            grids.append(s)
            ratios.append(ratio)
            if params.C is not None:
                margins.append(params.C - ratio)
        name, given = "gradient_noncompact_inf", params.C
    vals = [float(np.nanmax(x)) for x in ratios if np.any(np.isfinite(x))]
    if not vals:
        raise EstimateError("no evaluable node inside B(p, R)")
    emp = max(0.0, max(vals))
    if given is not None:
        e = _collect(name, grids, margins, lambda g: 1e-9 * max(1.0, given), report)
    else:
        e = Entry(name, float("nan"), 0, None, int(sum(np.isfinite(x).sum() for x in ratios)))
        report.entries.append(e)
    e.empirical_constant = emp
    if not np.isfinite(emp):
        report.warnings.append("empirical constant is not finite")
    return report


def relative_change(a, b):
    """|a - b| / max(|a|, |b|), zero when both vanish."""
    m = max(abs(a), abs(b))
    return 0.0 if m == 0 else abs(a - b) / m


# Harnack inequality ------------------------------------------------------------

_OFFSETS = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1),
            (1, 2), (2, 1), (-1, 2), (-2, 1), (1, -2), (2, -1), (-1, -2), (-2, -1)]


@dataclass
class HarnackReport:
    pairs: list
    P: float
    Q: np.ndarray
    margins: np.ndarray          # RHS - u(x1, t1)
    log_margins: np.ndarray      # log RHS - log u(x1, t1)
    min_margin: float
    violations: int
    calibrated_constant: float | None
    variant: str
    params: EstimateParams

    @property
    def evaluated(self):
        return len(self.pairs)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x1_1", "x1_2", "t1", "x2_1", "x2_2", "t2", "Q", "margin", "log_margin"])
            for ((a, t1), (b, t2)), Q, m, lm in zip(self.pairs, self.Q, self.margins,
                                                    self.log_margins):
                w.writerow([f"{a[0]:.10g}", f"{a[1]:.10g}", f"{t1:.10g}", f"{b[0]:.10g}",
                            f"{b[1]:.10g}", f"{t2:.10g}", f"{Q:.10g}", f"{m:.10g}", f"{lm:.10g}"])

    def summary(self):
        c = "" if self.calibrated_constant is None else f" calibrated_constant={self.calibrated_constant:.6g}"
        return (f"harnack ({self.variant}): pairs={self.evaluated} P={self.P:.6g} "
                f"min_margin={self.min_margin:.6g} violations={self.violations}{c}")


class _PathGraph:
    """Directed 16-neighbour graph on (a stride of) the grid nodes with edge
    weight F(midpoint, edge)."""

    def __init__(self, spec, grid, allowed, stride):
        self.spec = spec
        self.grid = grid
        self.periodic = grid.domain == "torus"
        k1, k2 = grid.shape
        I = np.arange(0, k1, stride)
        Jx = np.arange(0, k2, stride)
        if self.periodic and (k1 % stride or k2 % stride):
            raise EstimateError("stride must divide the torus grid size")
        self.h = grid.h * stride
        self.m1, self.m2 = len(I), len(Jx)
        self.lo = np.asarray(grid.lo, dtype=float)
        P = grid.points[np.ix_(I, Jx)]
        self.points = P
        self.allowed = allowed[np.ix_(I, Jx)]
        rows, cols, w = [], [], []
        idx = np.arange(self.m1 * self.m2).reshape(self.m1, self.m2)
        for (a, b) in _OFFSETS:
            ii, jj = np.meshgrid(np.arange(self.m1), np.arange(self.m2), indexing="ij")
            i2, j2 = ii + a, jj + b
            if self.periodic:
                i2 %= self.m1
                j2 %= self.m2
                ok = np.ones_like(ii, bool)
            else:
                ok = (i2 >= 0) & (i2 < self.m1) & (j2 >= 0) & (j2 < self.m2)
            i2c, j2c = np.clip(i2, 0, self.m1 - 1), np.clip(j2, 0, self.m2 - 1)
            ok &= self.allowed & self.allowed[i2c, j2c]
            d = np.array([a, b], dtype=float) * self.h
            x = P[ii[ok], jj[ok]] + 0.5 * d
            inside = spec.in_domain(x)
            wt = np.full(x.shape[0], np.inf)
            wt[inside] = spec.F(x[inside], np.broadcast_to(d, x[inside].shape))
            good = np.isfinite(wt)
            rows.append(idx[ii[ok], jj[ok]][good])
            cols.append(idx[i2c[ok], j2c[ok]][good])
            w.append(wt[good])
        self.idx = idx
        self.matrix = csr_matrix((np.concatenate(w), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(idx.size, idx.size))
        self.offsets = {}
        for (a, b) in _OFFSETS:
            self.offsets[(a, b)] = np.array([a, b])

    def nearest(self, x):
        z = (np.asarray(x, float) - self.lo) / self.h
        i = int(np.rint(z[0])) % self.m1 if self.periodic else int(np.clip(np.rint(z[0]), 0, self.m1 - 1))
        j = int(np.rint(z[1])) % self.m2 if self.periodic else int(np.clip(np.rint(z[1]), 0, self.m2 - 1))
        return i, j

    def path(self, src, dst, cache):
        """Node path src -> dst as unwrapped coordinates (None if unreachable)."""
        s = int(self.idx[src])
        d = int(self.idx[dst])
        if s not in cache:
            dist, pred = dijkstra(self.matrix, directed=True, indices=s, return_predecessors=True)
            cache[s] = (dist, pred)
        dist, pred = cache[s]
        if not np.isfinite(dist[d]):
            return None
        chain = [d]
        while chain[-1] != s:
            chain.append(int(pred[chain[-1]]))
        chain = chain[::-1]
        ij = np.array(np.unravel_index(chain, (self.m1, self.m2))).T
        pts = [self.points[ij[0][0], ij[0][1]]]
        for a, b in zip(ij[:-1], ij[1:]):
            step = b - a
            if self.periodic:
                step = (step + np.array([self.m1, self.m2]) // 2) % np.array([self.m1, self.m2]) \
                    - np.array([self.m1, self.m2]) // 2
            pts.append(pts[-1] + step * self.h)
        return np.array(pts)


def _resample(poly, m):
    seg = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        return np.repeat(poly[:1], m + 1, axis=0)
    u = np.linspace(0, s[-1], m + 1)
    return np.stack([np.interp(u, s, poly[:, i]) for i in range(poly.shape[1])], -1)


def _action(spec, q, P, t1, t2, beta, grad=False):
    """beta/(4 dt) int F^2(gamma') ds + dt int q(gamma(s), s t1 + (1-s) t2) ds for
    the polygon P (P[0] = x2, P[-1] = x1) at constant parameter speed."""
    m = len(P) - 1
    n = spec.n
    dT = t2 - t1
    d = np.diff(P, axis=0)
    mid = 0.5 * (P[1:] + P[:-1])
    s = (np.arange(m) + 0.5) / m
    tau = s * t1 + (1 - s) * t2
    c = beta / (4 * dT) * m
    if not grad:
        F2 = spec.F(mid, d) ** 2
        qv = np.array([float(q(mid[k], tau[k])) for k in range(m)]) if q.time_dependent \
            else q(mid, 0.0)
        return c * np.sum(F2) + dT / m * np.sum(qv)
    F2j, _, _ = f2_jet(spec, mid, d, 1, 1, 1)
    dx = np.stack([F2j.partial(_e(n, i)) for i in range(n)], -1)
    dy = np.stack([F2j.partial(_e(n, n + i)) for i in range(n)], -1)
    if q.time_dependent:
        qd = [q.derivatives(mid[k:k + 1], tau[k]) for k in range(m)]
        qv = np.array([float(np.ravel(a[0])[0]) for a in qd])
        dq = np.concatenate([a[1] for a in qd])
    else:
        qv, dq, _ = q.derivatives(mid, 0.0)
        qv = np.broadcast_to(qv, (m,))
    J = c * np.sum(F2j.value) + dT / m * np.sum(qv)
    gseg_lo = c * (0.5 * dx - dy) + dT / m * 0.5 * dq     # d/dP_k from segment k
    gseg_hi = c * (0.5 * dx + dy) + dT / m * 0.5 * dq     # d/dP_{k+1} from segment k
    G = np.zeros_like(P)
    G[:-1] += gseg_lo
    G[1:] += gseg_hi
    return J, G


def _smooth(spec, q, P, t1, t2, beta, iters, inside):
    """Local path smoothing: a few quasi-Newton steps on the interior vertices."""
    if len(P) <= 2:
        return P
    ends = (P[0].copy(), P[-1].copy())
    shape = P[1:-1].shape

    def fun(z):
        Q = np.vstack([ends[0], z.reshape(shape), ends[1]])
        if np.any(np.linalg.norm(np.diff(Q, axis=0), axis=1) < 1e-12):
            return 1e300, np.zeros_like(z)
        if not np.all(spec.in_domain(0.5 * (Q[1:] + Q[:-1]))):
            return 1e300, np.zeros_like(z)
        J, G = _action(spec, q, Q, t1, t2, beta, grad=True)
        return J, G[1:-1].ravel()

    res = minimize(fun, P[1:-1].ravel(), jac=True, method="L-BFGS-B",
                   options={"maxiter": iters})
    Q = np.vstack([ends[0], res.x.reshape(shape), ends[1]])
    if inside is not None and not np.all(inside(Q)):
        return P
    return Q


def _log_u_at(snap, x):
    """Bilinear interpolation of log u at the point x."""
    g = snap
    z = (np.asarray(x, float) - np.asarray(g.lo)) / g.h
    lu = np.log(np.where(g.values > 0, g.values, np.nan))
    mode = "grid-wrap" if g.domain == "torus" else "nearest"
    return float(map_coordinates(lu, z.reshape(2, 1), order=1, mode=mode)[0])


def _snapshot_at(snapshots, t):
    for s in snapshots:
        if abs(s.t - t) <= 1e-12 * max(1.0, abs(t)):
            return s
    raise EstimateError(f"no snapshot at t = {t:g}")


def harnack_P(params: EstimateParams, variant="compact"):
    """(P, calibrated constant) of the Harnack inequality.

    P is the constant delivered by integrating the Li-Yau estimate along the
    path: compact (root term)/beta, noncompact (C3 beta^2 R^-2 (1 + R + R sqrt K
    + beta^2/(beta-1)) + root term)/beta.  The calibrated constant is P divided
    by the bracket of the stated P formula (None when the bracket vanishes).
    """
    params = params.filled()
    b = params.beta
    th = max(params.theta, 0.0)
    B = root_term(params.N, b, params.eps, params.K, params.gamma, params.theta)
    common = ((params.gamma ** 2 * (b - 1) * b) ** (1 / 3) + b * params.K / (b - 1)
              + np.sqrt(b * th))
    if variant == "compact":
        P = B / b
        bracket = common
        if params.C_N is not None:
            P = params.C_N * bracket
    elif variant == "noncompact":
        if params.R is None:
            raise EstimateError("the noncompact Harnack inequality needs R")
        R = params.R
        C3 = params.C3 if params.C3 is not None else 0.0
        D = b ** 2 / R ** 2 * (1 + R + R * np.sqrt(params.K) + b ** 2 / (b - 1))
        P = (C3 * D + B) / b
        bracket = b * R * (np.sqrt(params.K) + 1) + b ** 3 / ((b - 1) * R ** 2) + common
    else:
        raise EstimateError("variant must be 'compact' or 'noncompact'")
    cal = P / bracket if bracket > 0 else None
    return float(P), cal


def harnack_check(spec, snapshots, params: EstimateParams, pairs, q=None, variant="compact",
                  region=None, stride=None, segments=48, smoothing_iters=20):
    """u(x1,t1) <= u(x2,t2) (t2/t1)^(N beta/2) exp(P (t2-t1) + Q) for each pair.

    Q is the path action minimized over forward paths from x2 to x1: Dijkstra
    on the forward F-length of a 16-neighbour grid graph, the path resampled
    to ``segments`` pieces and smoothed by ``smoothing_iters`` quasi-Newton
    steps on the full action; the straight segment is tried as well.
    ``region`` (with ``contains``) restricts the paths (noncompact variant).
    """
    q = q or PotentialSpec("0", spec.n)
    grid = snapshots[0]
    if stride is None:
        stride = max(1, int(np.ceil(max(grid.shape) / 96)))
        if grid.domain == "torus":
            while grid.shape[0] % stride or grid.shape[1] % stride:
                stride += 1
    allowed = grid.active().copy()
    if region is not None:
        allowed &= region.contains(grid.points)
    inside = region.contains if region is not None else None
    graph = _PathGraph(spec, grid, allowed, stride)
    P_const, cal = harnack_P(params, variant)
    b = params.beta
    cache = {}
    Qs, margins, logm = [], [], []
    for (x1, t1), (x2, t2) in pairs:
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        if not t1 < t2:
            raise EstimateError("each pair needs t1 < t2")
        if inside is not None and not (inside(x1) and inside(x2)):
            raise EstimateError("pair points must lie in the region")
        if np.allclose(x1, x2):
            path = np.vstack([x2, x1])
            cands = [np.repeat(x2[None], segments + 1, axis=0)]
        else:
            a = graph.nearest(x2)
            c = graph.nearest(x1)
            nodes = graph.path(a, c, cache)
            if nodes is None:
                raise EstimateError(f"no forward path from {x2} to {x1} in the grid graph")
            # unwrapped end point: the image of x1 next to the last node
            end = x1 + (nodes[-1] - graph.points[c]) if graph.periodic else x1
            path = np.vstack([x2, nodes[1:-1], end]) if len(nodes) > 2 else np.vstack([x2, end])
            cands = [_resample(path, segments), _resample(np.vstack([x2, end]), segments)]
        best = np.inf
        for Pth in cands:
            if np.allclose(Pth[0], Pth[-1]) and np.allclose(Pth, Pth[0]):
                s = (np.arange(segments) + 0.5) / segments
                val = (t2 - t1) * float(np.mean([q(Pth[0], si * t1 + (1 - si) * t2) for si in s]))
            else:
                if inside is not None and not np.all(inside(Pth)):
                    continue
                Pth = _smooth(spec, q, Pth, t1, t2, b, smoothing_iters, inside)
                val = _action(spec, q, Pth, t1, t2, b)
            best = min(best, float(val))
        if not np.isfinite(best):
            raise EstimateError(f"no admissible path from {x2} to {x1}")
        lu1 = _log_u_at(_snapshot_at(snapshots, t1), x1)
        lu2 = _log_u_at(_snapshot_at(snapshots, t2), x2)
        log_rhs = lu2 + params.N * b / 2 * np.log(t2 / t1) + P_const * (t2 - t1) + best
        Qs.append(best)
        logm.append(log_rhs - lu1)
        margins.append(np.exp(log_rhs) - np.exp(lu1))
    logm = np.array(logm)
    viol = int(np.sum(logm < -1e-9))
    return HarnackReport(pairs=[((tuple(np.asarray(a, float)), float(t1)),
                                 (tuple(np.asarray(c, float)), float(t2)))
                                for (a, t1), (c, t2) in pairs],
                         P=P_const, Q=np.array(Qs), margins=np.array(margins), log_margins=logm,
                         min_margin=float(np.min(margins)) if len(margins) else float("nan"),
                         violations=viol, calibrated_constant=cal, variant=variant,
                         params=params)


def random_pairs(snapshots, m, rng, region=None, t_min=None):
    """m random ((x1, t1), (x2, t2)) with t1 < t2 taken from the snapshot times
    and x1, x2 grid nodes (inside ``region`` when given)."""
    grid = snapshots[0]
    times = np.array([s.t for s in snapshots])
    if t_min is not None:
        times = times[times >= t_min]
    times = times[times > 0]
    if len(times) < 2:
        raise EstimateError("need two snapshot times")
    ok = grid.active() & _eval_mask(grid)
    if region is not None:
        ok &= region.contains(grid.points)
    nodes = grid.points[ok]
    out = []
    for _ in range(m):
        i, j = sorted(rng.choice(len(times), 2, replace=False))
        a, c = rng.choice(len(nodes), 2)
        out.append(((nodes[a], float(times[i])), (nodes[c], float(times[j]))))
    return out
