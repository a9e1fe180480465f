"""One test per acceptance criterion; each prints a single pass/fail line."""

import os
import subprocess
import sys
import time

import numpy as np
import pytest

from finslerlab import comparison as CMP
from finslerlab import constants as CON
from finslerlab import curvature as CUR
from finslerlab import metric as M
from finslerlab.estimates import (EstimateParams, check_compact_N, check_compact_inf,
                                  check_noncompact, forward_distance, harnack_check,
                                  li_yau_H, random_pairs, relative_change)
from finslerlab.grid import ball_grid, box_grid, torus_grid
from finslerlab.pde import PotentialSpec, SolverConfig, solve_schrodinger
from finslerlab.regions import Ball

pytestmark = pytest.mark.acceptance

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
TWO_PI = 2 * np.pi
BUMP_B = ["0.2*exp(-(x1^2+x2^2))", "0"]
RIEM_A = [["1 + 0.5*x1^2", "0.2*sin(x2)"], ["0.2*sin(x2)", "exp(0.3*x1*x2)"]]


def heat_kernel(x, t):
    return np.exp(-np.sum(x ** 2, axis=-1) / (4 * t)) / (4 * np.pi * t)


def five_specs():
    return {
        "euclidean": M.euclidean(2),
        "riemannian": M.riemannian(RIEM_A),
        "randers_const": M.randers(b=[0.5, 0.0]),
        "randers_bump": M.randers(b=BUMP_B),
        "funk": M.funk_disk(2),
    }


# 1 -------------------------------------------------------------------------

def test_criterion_01_tensor_identities(verdict):
    t0 = time.time()
    rng = np.random.default_rng(1)
    worst = {"F2": 0.0, "Cy": 0.0, "hom": 0.0, "legendre": 0.0}
    for name, spec in five_specs().items():
        x = spec.sample_points(rng, 1000)
        y = rng.normal(size=(1000, 2))
        k = rng.uniform(0.1, 10.0, size=(1000, 1))
        fd = M.fundamental(spec, x, y)
        F2 = spec.F(x, y) ** 2
        gyy = np.einsum("...i,...ij,...j->...", y, fd.g, y)
        worst["F2"] = max(worst["F2"], np.max(np.abs(gyy - F2) / F2))
        Cy = np.einsum("...i,...ijk->...jk", y, fd.cartan)
        worst["Cy"] = max(worst["Cy"], np.max(np.abs(Cy)))
        gk = M.metric_tensor(spec, x, k * y)
        worst["hom"] = max(worst["hom"], np.max(np.abs(gk - fd.g)))
        xi = M.to_cotangent(spec, x, y)
        y_back, _ = M.to_tangent(spec, x, xi)
        rel = np.linalg.norm(y_back - y, axis=-1) / np.linalg.norm(y, axis=-1)
        worst["legendre"] = max(worst["legendre"], np.max(rel))
    dt = time.time() - t0
    ok = verdict("criterion 1 tensor identities",
                 all(v <= 1e-9 for v in worst.values()),
                 " ".join(f"{k}={v:.2e}" for k, v in worst.items()), dt, 30)
    assert ok


# 2 -------------------------------------------------------------------------

def _levi_civita_fd(x, h=1e-5):
    """Christoffel symbols of RIEM_A by central differences (independent oracle)."""
    def a(p):
        x1, x2 = p[..., 0], p[..., 1]
        s = 0.2 * np.sin(x2)
        return np.stack([np.stack([1 + 0.5 * x1 ** 2, s], -1),
                         np.stack([s, np.exp(0.3 * x1 * x2)], -1)], -2)
    da = []
    for l in range(2):
        e = np.zeros(2)
        e[l] = h
        da.append((a(x + e) - a(x - e)) / (2 * h))
    da = np.stack(da, -1)                         # da[..., i, j, l] = d_l a_ij
    ainv = np.linalg.inv(a(x))
    # term[l, j, k] = d_j a_lk + d_k a_lj - d_l a_jk
    term = np.einsum("...lkj->...ljk", da) + da - np.einsum("...jkl->...ljk", da)
    return 0.5 * np.einsum("...il,...ljk->...ijk", ainv, term)


def test_criterion_02_riemannian_reduction(verdict):
    t0 = time.time()
    spec = M.riemannian(RIEM_A)
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, size=(200, 2))
    V = rng.normal(size=(200, 2))
    W = rng.normal(size=(200, 2))
    gam = CUR.connection(spec, x, V).chern
    err_gamma = np.max(np.abs(gam - _levi_civita_fd(x)))
    err_c = np.max(np.abs(M.fundamental(spec, x, V).cartan))
    nr = CUR.non_riemannian(spec, M.lebesgue(), x, V, W)
    err_nr = max(np.max(np.abs(nr.T_diff)), np.max(np.abs(nr.U_vec)), np.max(np.abs(nr.divC)))
    err_const = 0.0
    for p in x[:10]:
        rep = CON.misalignment_local(spec, p)
        err_const = max(err_const, abs(rep.alpha - 1), abs(rep.kappa - 1),
                        abs(rep.kappa_star - 1))
    region = Ball((0.0, 0.0), 0.9)
    a_reg = CON.misalignment_region(spec, region)
    k_reg, ks_reg, _ = CON.uniform_constants(spec, region)
    err_const = max(err_const, abs(a_reg - 1), abs(k_reg - 1), abs(ks_reg - 1))
    dt = time.time() - t0
    ok = (err_gamma <= 1e-6 and err_c <= 1e-8 and err_nr <= 1e-8 and err_const <= 1e-6)
    ok = verdict("criterion 2 Riemannian reduction", ok,
                 f"Gamma={err_gamma:.2e} C={err_c:.2e} T,U,divC={err_nr:.2e} "
                 f"alpha,kappa,kappa*={err_const:.2e}", dt, 60)
    assert ok


# 3 -------------------------------------------------------------------------

def test_criterion_03_curvature_oracle(verdict):
    t0 = time.time()
    rng = np.random.default_rng(3)
    P = M.poincare_disk()
    x = P.sample_points(rng, 100)
    y = rng.normal(size=(100, 2))
    u = rng.normal(size=(100, 2))
    Kp = CUR.curvatures(P, x, y, u).flag
    err_p = np.max(np.abs(Kp + 1))
    E = M.euclidean(2)
    ce = CUR.curvatures(E, x, y, u)
    err_e = max(np.max(np.abs(ce.flag)), np.max(np.abs(ce.hh)), np.max(np.abs(ce.ricci)))
    dt = time.time() - t0
    ok = verdict("criterion 3 curvature oracle", err_p <= 1e-4 and err_e <= 1e-12,
                 f"poincare |K+1|max={err_p:.2e} euclidean max={err_e:.2e}", dt, 30)
    assert ok


# 4 -------------------------------------------------------------------------

def test_criterion_04_misalignment_structure(verdict):
    t0 = time.time()
    rng = np.random.default_rng(4)
    tol = 1e-6
    worst_prod, worst_chain = 0.0, np.inf
    specs = {"randers_const": M.randers(b=[0.5, 0.0]), "randers_bump": M.randers(b=BUMP_B),
             "funk": M.funk_disk(2)}
    for name, spec in specs.items():
        for p in spec.sample_points(rng, 12):
            res = CON.misalignment_local(spec, p, tol=tol).chain_residuals()
            worst_prod = max(worst_prod, res.pop("alpha_M*alpha_m-1"))
            worst_chain = min(worst_chain, min(res.values()))
        region = Ball((0.0, 0.0), 0.5)
        a = CON.misalignment_region(spec, region, tol=tol)
        k, ks, rho = CON.uniform_constants(spec, region, tol=tol)
        worst_chain = min(worst_chain, a - rho * rho, ks - 1 / a, 1 - ks, k - 1, a - k, k / ks - a)
    funk = M.funk_disk(2)
    prof = [CON.misalignment_local(funk, np.array([s, 0.0])).alpha for s in (0.3, 0.5, 0.7, 0.9)]
    mono = all(b > a for a, b in zip(prof, prof[1:]))
    dt = time.time() - t0
    ok = (worst_prod <= 1e-6 and worst_chain >= -tol * 10 and mono and prof[-1] > 10)
    ok = verdict("criterion 4 misalignment structure", ok,
                 f"|aM*am-1|max={worst_prod:.2e} min chain slack={worst_chain:.2e} "
                 f"funk alpha={['%.4g' % v for v in prof]}", dt, 180)
    assert ok


# 5 -------------------------------------------------------------------------

def test_criterion_05_laplacian_comparison(verdict):
    t0 = time.time()
    P = M.poincare_disk()
    g = "4/(1-x1^2-x2^2)^2"
    mu_p = M.riemannian_volume([[g, "0"], ["0", g]])
    rep = CMP.verify_comparison(P, mu_p, [0, 0], Ball((0.0, 0.0), 0.8), 3,
                                V_policy="gradient", alpha=1.0, K=1.0, K0=0.0, k=161)
    r = rep.r
    closed = np.sqrt(2) / np.tanh(r / np.sqrt(2))
    bound_ok = np.allclose(rep.bound, closed, rtol=1e-12)
    truth_ok = bool(np.all(closed - 1 / np.tanh(r) > 0))
    lines = [f"poincare min_margin={rep.min_margin:.3g} violations={rep.violations}"]
    ok = rep.min_margin > 0 and rep.violations == 0 and bound_ok and truth_ok

    spec = M.randers(b=BUMP_B)
    mu = M.lebesgue()
    B = Ball((0.0, 0.0), 1.0)
    field_ = CMP.distance_field(spec, mu, [0, 0], [-1, -1], [1, 1], 121, region=B)
    alpha = CON.misalignment_region(spec, B)
    K0 = CUR.k0_bound(spec, mu, B.sample, 4096)
    for mode in ("mixed", "flag", "infty_variant"):
        cb = CMP.curvature_lower_bound(spec, mu, B, 3, mode, 2000, 0)
        for policy in ("gradient", "rotating"):
            rr = CMP.verify_comparison(spec, mu, [0, 0], B, 3, V_policy=policy, mode=mode,
                                       alpha=alpha, K=cb.K, K0=K0, field_=field_)
            ok = ok and rr.violations == 0 and rr.evaluated >= 10_000
            lines.append(f"{mode}/{policy} n={rr.evaluated} viol={rr.violations}")
    dt = time.time() - t0
    ok = verdict("criterion 5 Laplacian comparison", ok, "; ".join(lines), dt, 180)
    assert ok


# 6 -------------------------------------------------------------------------

def test_criterion_06_pde_accuracy(verdict):
    t0 = time.time()
    E, leb = M.euclidean(2), M.lebesgue()
    g = torus_grid((16, 16), 256, lo=(-8, -8))
    ts = tuple(np.round(np.arange(0.1, 1.0001, 0.1), 10))
    res = solve_schrodinger(E, leb, g.with_values(heat_kernel(g.points, 0.1), t=0.1), None,
                            SolverConfig(t_end=0.9, snapshot_times=ts))
    linf = max(np.max(np.abs(s.values - heat_kernel(g.points, s.t))) / heat_kernel(0 * g.points[0, 0], s.t)
               for s in res.snapshots)

    errs = []
    for k in (32, 64, 128):
        gk = torus_grid((8, 8), k, lo=(-4, -4))
        rk = solve_schrodinger(E, leb, gk.with_values(heat_kernel(gk.points, 0.25), t=0.25), None,
                               SolverConfig(t_end=0.25))
        errs.append(np.max(np.abs(rk.snapshots[-1].values - heat_kernel(gk.points, 0.5))))
    order = min(np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2]))

    R = M.randers(b=[0.3, 0.0])
    gt = torus_grid((TWO_PI, TWO_PI), 32)
    X = gt.points
    u0 = gt.with_values(1 + 0.5 * np.cos(X[..., 0]) * np.cos(X[..., 1]) + 0.3 * np.sin(X[..., 0]))
    rm = solve_schrodinger(R, leb, u0, None, SolverConfig(t_end=1.0))
    drift = np.max(np.abs(rm.mass - rm.mass[0])) / rm.mass[0] / 1.0

    lam = 0.7
    rg = solve_schrodinger(R, leb, u0, PotentialSpec.constant(lam), SolverConfig(t_end=1.0))
    gauge = np.max(np.abs(rg.snapshots[-1].values - np.exp(-lam) * rm.snapshots[-1].values))
    dt = time.time() - t0
    ok = linf <= 0.02 and order >= 1.7 and drift <= 1e-6 and gauge <= 1e-8
    ok = verdict("criterion 6 PDE accuracy", ok,
                 f"heat kernel rel Linf={linf:.2e} order={order:.3f} mass drift={drift:.2e}/unit t "
                 f"gauge={gauge:.2e}", dt, 120)
    assert ok


# 7 -------------------------------------------------------------------------

def test_criterion_07_li_yau_sharpness(verdict):
    t0 = time.time()
    E = M.euclidean(2)
    g = box_grid((-4, -4), (4, 4), 256)
    worst = 0.0
    for t in np.linspace(0.2, 1.0, 17):
        d = 1e-4
        snaps = [g.with_values(heat_kernel(g.points, s), t=s) for s in (t - d, t, t + d)]
        H = li_yau_H(E, snaps, beta=1.0).H[0].values / t
        worst = max(worst, np.nanmax(np.abs(H - 2 / (2 * t))))
    dt = time.time() - t0
    ok = verdict("criterion 7 Li-Yau sharpness", worst <= 1e-3,
                 f"max|F^2(grad f)-f_t-n/(2t)|={worst:.2e}", dt, 60)
    assert ok


# 8 -------------------------------------------------------------------------

def _torus_run(spec, q, k, u0_fn, t_end, times):
    g = torus_grid((TWO_PI, TWO_PI), k)
    u0 = g.with_values(u0_fn(g.points), t=0.0)
    return solve_schrodinger(spec, M.lebesgue(), u0, q, SolverConfig(t_end=t_end, snapshot_times=times))


def _cos_mode(P):
    return 1 + 0.5 * np.cos(P[..., 0]) * np.cos(P[..., 1])


def _mixed_mode(P):
    return _cos_mode(P) + 0.3 * np.sin(P[..., 0] + 2 * P[..., 1])


def test_criterion_08_compact_estimates(verdict):
    t0 = time.time()
    leb = M.lebesgue()
    ts = tuple(np.round(np.linspace(0.05, 1.05, 21), 10))
    lines, ok = [], True
    scenarios = [("flat", M.euclidean(2), PotentialSpec("0"), _cos_mode),
                 ("randers", M.randers(b=[0.3, 0.0]), PotentialSpec("0.1*sin(x1)"), _mixed_mode)]
    for name, spec, q, u0 in scenarios:
        res = _torus_run(spec, q, 48, u0, 1.05, ts)
        for beta in (1.5, 2.0):
            rep = check_compact_N(spec, leb, res.snapshots, EstimateParams(N=3, beta=beta), q=q,
                                  ut=res.ut, t_window=(0.1, 1.0))
            ok = ok and rep.violations == 0
            lines.append(f"{name} b={beta} viol={rep.violations} margin={rep.min_margin:.3g}")
    long_t = tuple(np.arange(0, 26, 1.0))
    for qs, window in (("0", (20, np.inf)), ("-0.1", (0.0, np.inf))):
        q = PotentialSpec(qs)
        res = _torus_run(M.euclidean(2), q, 32, lambda P: 1 + 0.5 * np.cos(P[..., 0]), 25, long_t)
        rep = check_compact_inf(M.euclidean(2), leb, res.snapshots, EstimateParams(N=3), q=q,
                                t_window=window)
        ok = ok and rep.violations == 0 and len(rep.entries) > 0
        lines.append(f"inf q={qs} t>={window[0]} viol={rep.violations}")
    dt = time.time() - t0
    ok = verdict("criterion 8 compact estimates", ok, "; ".join(lines), dt, 180)
    assert ok


# 9 -------------------------------------------------------------------------

def _ball_run(spec, q, R, h, exact_boundary):
    rad = 2 * R
    k = int(round(2 * rad / h)) + 1
    g = ball_grid((0, 0), rad, k, boundary="dirichlet")
    u0 = g.with_values(heat_kernel(g.points, 0.1), t=0.1)
    ts = tuple(np.round(np.linspace(0.1, 0.6, 26), 10))
    cfg = SolverConfig(t_end=0.5, snapshot_times=ts,
                       boundary_values=heat_kernel if exact_boundary else None)
    return solve_schrodinger(spec, M.lebesgue(), u0, q, cfg)


def test_criterion_09_noncompact_estimates(verdict):
    t0 = time.time()
    leb = M.lebesgue()
    lines, ok = [], True
    scenarios = [("euclidean", M.euclidean(2), PotentialSpec("0"), True),
                 ("randers_bump", M.randers(b=BUMP_B), PotentialSpec("0.05*x1"), False)]
    for name, spec, q, exact in scenarios:
        consts = {}
        for R, h in ((1.0, 0.1), (1.0, 0.05), (1.5, 0.1)):
            res = _ball_run(spec, q, R, h, exact)
            r = forward_distance(spec, leb, res.snapshots[0], np.zeros(2))
            for which in ("N", "inf"):
                rep = check_noncompact(spec, leb, res.snapshots, EstimateParams(N=3, beta=2.0, R=R),
                                       (0, 0), which, q=q, ut=res.ut, r=r)
                consts[(which, R, h)] = rep.empirical_constant
        for which, label in (("N", "C3"), ("inf", "C")):
            base = consts[(which, 1.0, 0.1)]
            dh = relative_change(base, consts[(which, 1.0, 0.05)])
            dR = relative_change(base, consts[(which, 1.5, 0.1)])
            finite = all(np.isfinite(v) for (w, _, _), v in consts.items() if w == which)
            ok = ok and finite and dh <= 0.2 and dR <= 0.2
            lines.append(f"{name} {label}={base:.4g} dh={dh:.1%} dR={dR:.1%}")
    dt = time.time() - t0
    ok = verdict("criterion 9 noncompact estimates", ok, "; ".join(lines), dt, 300)
    assert ok


# 10 ------------------------------------------------------------------------

def test_criterion_10_harnack(verdict):
    t0 = time.time()
    lines, ok = [], True
    ts = tuple(np.round(np.linspace(0.05, 1.05, 21), 10))
    for name, spec, q, u0 in (("flat torus", M.euclidean(2), PotentialSpec("0"), _cos_mode),
                              ("randers torus", M.randers(b=[0.3, 0.0]),
                               PotentialSpec("0.1*sin(x1)"), _mixed_mode)):
        res = _torus_run(spec, q, 48, u0, 1.05, ts)
        rep = check_compact_N(spec, M.lebesgue(), res.snapshots, EstimateParams(N=3, beta=2.0),
                              q=q, ut=res.ut, t_window=(0.1, 1.0))
        pairs = random_pairs(res.snapshots, 100, np.random.default_rng(0), t_min=0.1)
        hr = harnack_check(spec, res.snapshots, rep.params, pairs, q=q)
        ok = ok and hr.violations == 0 and hr.evaluated == 100
        lines.append(f"{name} viol={hr.violations}")

    R = 1.0
    res = _ball_run(M.euclidean(2), PotentialSpec("0"), R, 0.1, True)
    region = Ball((0.0, 0.0), R)
    pairs = random_pairs(res.snapshots, 100, np.random.default_rng(1), region=region, t_min=0.2)
    params = EstimateParams(N=3, beta=2.0, R=R, K=0, gamma=0, theta=0, C3=0.0)
    hr = harnack_check(M.euclidean(2), res.snapshots, params, pairs, variant="noncompact",
                       region=region)
    ok = ok and hr.violations == 0
    dx = np.array([np.linalg.norm(a[0] - b[0]) for a, b in pairs])
    dts = np.array([b[1] - a[1] for a, b in pairs])
    closed = 2.0 * dx ** 2 / (4 * dts)
    sel = closed > 1e-3
    rel = np.max(np.abs(hr.Q[sel] - closed[sel]) / closed[sel])
    ok = ok and rel <= 0.05
    lines.append(f"euclidean ball viol={hr.violations} flat Q rel err={rel:.2e}")
    dt = time.time() - t0
    ok = verdict("criterion 10 Harnack", ok, "; ".join(lines), dt, 120)
    assert ok


# 11 ------------------------------------------------------------------------

def _cli(args, cwd):
    env = dict(os.environ, PYTHONPATH=os.path.join(ROOT, "src"))
    return subprocess.run([sys.executable, "-m", "finslerlab", *args], cwd=cwd, env=env,
                          capture_output=True, text=True)


def _tree(d):
    out = {}
    for base, _, files in os.walk(d):
        for f in files:
            p = os.path.join(base, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, d)] = fh.read()
    return out


def test_criterion_11_cli_determinism(verdict, tmp_path):
    t0 = time.time()
    runs = [("constants", "funk.ini"), ("verify", "euclidean.ini"), ("harnack", "euclidean.ini"),
            ("compare", "poincare.ini")]
    trees = []
    for rep in ("a", "b"):
        out = tmp_path / rep
        for cmd, cfg in runs:
            p = _cli([cmd, os.path.join(ROOT, "configs", cfg), "--set", f"output.dir={out}"], tmp_path)
            assert p.returncode == 0, p.stderr
        trees.append(_tree(out))
    identical = trees[0] == trees[1] and len(trees[0]) > 0
    neg = _cli(["verify", os.path.join(ROOT, "configs", "understated_k.ini"),
                "--set", f"output.dir={tmp_path / 'neg'}"], tmp_path)
    listed = "violation" in neg.stdout and "hypothesis_K" in neg.stdout
    dt = time.time() - t0
    ok = verdict("criterion 11 CLI determinism and negative path",
                 identical and neg.returncode == 3 and listed,
                 f"{len(trees[0])} files byte-identical={identical} understated-K exit={neg.returncode}",
                 dt, 300)
    assert ok
