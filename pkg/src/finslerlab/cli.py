"""Command-line driver: ``finslerlab <command> config.ini [--set section.key=value]``.

Commands: validate, tensors, constants, compare, solve, verify, harnack,
report.  Exit codes: 0 success, 1 configuration or usage error, 2 run
failure, 3 verification violations.  Outputs go to [output] dir.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import glob
import os
import sys
from dataclasses import replace

import numpy as np

from .comparison import verify_comparison
from .constants import misalignment_local, misalignment_region, uniform_constants, \
    write_profile_csv
from .curvature import curvatures, distortion_s
from .estimates import EstimateError, EstimateParams, check_compact_N, check_compact_inf, \
    check_noncompact, forward_distance, harnack_check, measure_inputs, random_pairs, \
    torus_region
from .expr import Expression, ExpressionError
from .grid import ball_grid, box_grid, torus_grid
from .metric import MetricError, fundamental, measure_from_config, metric_from_config
from .pde import CFLError, PotentialSpec, SolverConfig, SolverError, solve_schrodinger
from .regions import Ball, region_from_config

COMMANDS = ("validate", "tensors", "constants", "compare", "solve", "verify", "harnack",
            "report")

SECTIONS = {
    "run": {"seed"},
    "metric": None,          # checked by metric_from_config
    "measure": None,
    "region": None,
    "output": {"dir"},
    "tensors": {"points", "directions"},
    "constants": {"tol", "samples", "grid", "profile_direction", "profile_radii"},
    "compare": {"p", "n_eff", "mode", "policy", "k", "alpha", "k_curv", "k0",
                "curvature_samples", "k0_samples"},
    "grid": {"domain", "k", "period", "lo", "hi", "center", "radius", "boundary"},
    "initial": {"u0", "t0"},
    "potential": {"q"},
    "solver": {"t_end", "dt", "scheme", "cfl_safety", "snapshots", "snapshot_count",
               "boundary_u"},
    "estimate": {"check", "n_eff", "beta", "eps", "k_curv", "k_prime", "gamma", "theta",
                 "q_minus", "r", "p", "t_min", "t_max", "c3", "c", "near_constant_tol",
                 "samples"},
    "harnack": {"pairs", "variant", "beta", "n_eff", "r", "p", "t_min", "c3", "k_curv",
                "gamma", "theta"},
}


class ConfigError(ValueError):
    pass


# configuration ---------------------------------------------------------------

def load_config(path, overrides=()):
    """Read an INI file, apply ``section.key=value`` overrides and reject
    unknown sections and keys."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str.lower
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        cp.read(path)
    except configparser.Error as err:
        raise ConfigError(f"config parse error: {err}") from err
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        sec, key = lhs.split(".", 1)
        if not cp.has_section(sec):
            cp.add_section(sec)
        cp.set(sec, key.strip().lower(), value.strip())
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        allowed = SECTIONS[sec]
        if allowed is not None:
            bad = set(cp[sec]) - allowed
            if bad:
                raise ConfigError(f"[{sec}] unknown key(s): {', '.join(sorted(bad))}")
    return cp


def _sec(cp, name):
    return dict(cp[name]) if cp.has_section(name) else {}


def _float(sec, key, default=None, section=""):
    if key not in sec or sec[key] == "":
        return default
    try:
        return float(sec[key])
    except ValueError as err:
        raise ConfigError(f"[{section}] {key}: not a number ({sec[key]!r})") from err


def _int(sec, key, default=None, section=""):
    v = _float(sec, key, None, section)
    if v is None:
        return default
    if v != int(v):
        raise ConfigError(f"[{section}] {key}: expected an integer")
    return int(v)


def _vec(sec, key, default=None, section=""):
    if key not in sec:
        return default
    try:
        return np.array([float(v) for v in sec[key].split(",") if v.strip()])
    except ValueError as err:
        raise ConfigError(f"[{section}] {key}: expected comma-separated numbers") from err


def _points(text, section, key):
    try:
        rows = [[float(v) for v in part.split(",")] for part in text.split(";") if part.strip()]
        return np.array(rows)
    except ValueError as err:
        raise ConfigError(f"[{section}] {key}: expected 'a,b; c,d; ...'") from err


def _seed(cp):
    return _int(_sec(cp, "run"), "seed", 0, "run")


def _outdir(cp):
    d = _sec(cp, "output").get("dir", "finslerlab_out")
    os.makedirs(d, exist_ok=True)
    return d


def _geometry(cp):
    try:
        spec = metric_from_config(_sec(cp, "metric"))
        measure = measure_from_config(_sec(cp, "measure"), spec)
    except MetricError as err:
        raise ConfigError(str(err)) from err
    return spec, measure


def _region(cp, spec):
    try:
        return region_from_config(_sec(cp, "region"), spec.n)
    except (ValueError, KeyError) as err:
        raise ConfigError(f"[region] {err}") from err


def _potential(cp, n):
    q = _sec(cp, "potential").get("q", "0")
    try:
        return PotentialSpec(q, n)
    except ExpressionError as err:
        raise ConfigError(f"[potential] q: {err}") from err


def _grid(cp):
    sec = _sec(cp, "grid")
    dom = sec.get("domain", "torus")
    k = _int(sec, "k", 64, "grid")
    if dom == "torus":
        L = _float(sec, "period", 2 * np.pi, "grid")
        lo = _vec(sec, "lo", np.zeros(2), "grid")
        return torus_grid((L, L), k, tuple(lo))
    if dom == "ball":
        c = _vec(sec, "center", np.zeros(2), "grid")
        R = _float(sec, "radius", 1.0, "grid")
        b = sec.get("boundary", "neumann")
        if b not in ("neumann", "dirichlet"):
            raise ConfigError("[grid] boundary must be neumann or dirichlet")
        return ball_grid(tuple(c), R, k, boundary=b)
    if dom == "box":
        return box_grid(_vec(sec, "lo", None, "grid"), _vec(sec, "hi", None, "grid"), k)
    raise ConfigError(f"[grid] unknown domain {dom!r}")


def _expr_field(text, section, key, names=("x1", "x2", "t")):
    try:
        return Expression(text, list(names))
    except ExpressionError as err:
        raise ConfigError(f"[{section}] {key}: {err}") from err


def _solve(cp, spec, measure):
    grid = _grid(cp)
    ini = _sec(cp, "initial")
    t0 = _float(ini, "t0", 0.0, "initial")
    e = _expr_field(ini.get("u0", "1"), "initial", "u0")
    P = grid.points
    u0 = np.broadcast_to(np.asarray(e(x1=P[..., 0], x2=P[..., 1], t=t0), float), grid.shape)
    u0 = grid.with_values(np.array(u0), t=t0)
    q = _potential(cp, spec.n)
    sec = _sec(cp, "solver")
    t_end = _float(sec, "t_end", 1.0, "solver")
    if "snapshots" in sec:
        snaps = tuple(float(v) for v in sec["snapshots"].split(",") if v.strip())
    else:
        m = _int(sec, "snapshot_count", 11, "solver")
        snaps = tuple(np.round(np.linspace(t0, t0 + t_end, m), 12))
    bv = None
    if "boundary_u" in sec:
        be = _expr_field(sec["boundary_u"], "solver", "boundary_u")

        def bv(x, t):
            return np.asarray(be(x1=x[..., 0], x2=x[..., 1], t=t), float)
    try:
        cfg = SolverConfig(t_end=t_end, dt=_float(sec, "dt", None, "solver"),
                           scheme=sec.get("scheme", "explicit-rk2"),
                           cfl_safety=_float(sec, "cfl_safety", 0.4, "solver"),
                           snapshot_times=snaps, boundary_values=bv)
    except ValueError as err:
        raise ConfigError(f"[solver] {err}") from err
    return solve_schrodinger(spec, measure, u0, q, cfg), q


def _write_summary(outdir, name, lines, violations):
    path = os.path.join(outdir, f"{name}_summary.txt")
    with open(path, "w") as fh:
        for line in lines:
            fh.write(line.rstrip() + "\n")
        fh.write(f"status: violations={violations}\n")
    for line in lines:
        print(line)
    return path


# commands ------------------------------------------------------------------------

def cmd_validate(cp):
    spec, measure = _geometry(cp)
    region = _region(cp, spec)
    seed = _seed(cp)
    alpha = misalignment_region(spec, region, seed=seed)
    kap, kap_s, rho = uniform_constants(spec, region, seed=seed)
    lines = [f"metric {spec.kind} (n={spec.n}) measure {measure.kind}",
             f"certificate: {spec.certificate}",
             f"α={alpha:.6g}, κ={kap:.6g}, κ*={kap_s:.6g}, ρ={rho:.6g}"]
    _write_summary(_outdir(cp), "validate", lines, 0)
    return 0


def cmd_tensors(cp):
    spec, measure = _geometry(cp)
    sec = _sec(cp, "tensors")
    pts = _points(sec.get("points", "0,0"), "tensors", "points")
    dirs = _points(sec.get("directions", "1,0"), "tensors", "directions")
    if len(dirs) == 1:
        dirs = np.repeat(dirs, len(pts), axis=0)
    if len(dirs) != len(pts):
        raise ConfigError("[tensors] points and directions differ in count")
    fd = fundamental(spec, pts, dirs)
    u = np.stack([-dirs[:, 1], dirs[:, 0]], -1)
    cd = curvatures(spec, pts, dirs, u)
    S = distortion_s(spec, measure, pts, dirs, "S")
    path = os.path.join(_outdir(cp), "tensors.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x1", "x2", "y1", "y2", "F", "g11", "g12", "g22", "C111", "C112", "C122",
                    "C222", "I1", "I2", "flag", "ricci", "S"])
        F = spec.F(pts, dirs)
        for i in range(len(pts)):
            C = fd.cartan[i]
            w.writerow([f"{v:.12g}" for v in (
                pts[i, 0], pts[i, 1], dirs[i, 0], dirs[i, 1], F[i], fd.g[i, 0, 0], fd.g[i, 0, 1],
                fd.g[i, 1, 1], C[0, 0, 0], C[0, 0, 1], C[0, 1, 1], C[1, 1, 1],
                fd.mean_cartan[i, 0], fd.mean_cartan[i, 1], cd.flag[i], cd.ricci[i], S[i])])
    _write_summary(_outdir(cp), "tensors", [f"wrote {len(pts)} row(s) to {path}"], 0)
    return 0


def cmd_constants(cp):
    spec, _ = _geometry(cp)
    region = _region(cp, spec)
    sec = _sec(cp, "constants")
    tol = _float(sec, "tol", 1e-6, "constants")
    samples = _int(sec, "samples", 128, "constants")
    grid = _int(sec, "grid", 64, "constants")
    seed = _seed(cp)
    alpha = misalignment_region(spec, region, tol=tol, samples=samples, seed=seed, grid=grid)
    kap, kap_s, rho = uniform_constants(spec, region, tol=tol, samples=samples, seed=seed,
                                        grid=grid)
    lines = [f"alpha={alpha:.10g}", f"kappa={kap:.10g}", f"kappa_star={kap_s:.10g}",
             f"rho={rho:.10g}"]
    out = _outdir(cp)
    d = _vec(sec, "profile_direction", None, "constants")
    if d is not None:
        radii = _vec(sec, "profile_radii", np.linspace(0, 0.9, 10), "constants")
        c = np.asarray(getattr(region, "center", np.zeros(spec.n)), float)
        xs = c + radii[:, None] * (d / np.linalg.norm(d))
        al = [misalignment_local(spec, x, tol=tol, grid=grid).alpha for x in xs]
        write_profile_csv(os.path.join(out, "alpha_profile.csv"), xs, al)
        lines.append(f"profile: {len(xs)} point(s) written to alpha_profile.csv")
    with open(os.path.join(out, "constants.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "kappa", "kappa_star", "rho"])
        w.writerow([f"{v:.10g}" for v in (alpha, kap, kap_s, rho)])
    _write_summary(out, "constants", lines, 0)
    return 0


def cmd_compare(cp):
    spec, measure = _geometry(cp)
    region = _region(cp, spec)
    if not isinstance(region, Ball):
        raise ConfigError("[region] compare needs type = ball")
    sec = _sec(cp, "compare")
    p = _vec(sec, "p", np.asarray(region.center, float), "compare")
    N = _float(sec, "n_eff", spec.n + 1, "compare")
    rep = verify_comparison(spec, measure, p, region, N,
                            V_policy=sec.get("policy", "rotating"), mode=sec.get("mode", "mixed"),
                            k=_int(sec, "k", None, "compare"),
                            alpha=_float(sec, "alpha", None, "compare"),
                            K=_float(sec, "k_curv", None, "compare"),
                            K0=_float(sec, "k0", None, "compare"),
                            curvature_samples=_int(sec, "curvature_samples", 2000, "compare"),
                            k0_samples=_int(sec, "k0_samples", 4096, "compare"),
                            seed=_seed(cp))
    out = _outdir(cp)
    rep.write_csv(os.path.join(out, "compare.csv"))
    lines = [rep.summary(), f"min margin {rep.min_margin:.6g}"]
    if rep.violations:
        bad = np.nonzero(rep.margin < -rep.tolerance)[0][:20]
        for i in bad:
            lines.append(f"violation at x=({rep.points[i, 0]:.6g}, {rep.points[i, 1]:.6g}) "
                         f"margin={rep.margin[i]:.6g}")
    _write_summary(out, "compare", lines, rep.violations)
    return 3 if rep.violations else 0


def cmd_solve(cp):
    spec, measure = _geometry(cp)
    res, _ = _solve(cp, spec, measure)
    out = _outdir(cp)
    names = res.write(out)
    lines = [f"solved to t={res.times[-1]:.6g} in {res.steps} step(s) (dt={res.dt:.6g})",
             f"wrote {len(names)} snapshot(s) and manifest.txt"]
    _write_summary(out, "solve", lines, 0)
    return 0


def _estimate_params(sec, spec, section, beta):
    return EstimateParams(
        N=_float(sec, "n_eff", spec.n + 1, section), beta=beta,
        eps=_float(sec, "eps", None, section), K=_float(sec, "k_curv", None, section),
        K_prime=_float(sec, "k_prime", None, section), gamma=_float(sec, "gamma", None, section),
        theta=_float(sec, "theta", None, section), q_minus=_float(sec, "q_minus", None, section),
        R=_float(sec, "r", None, section), C3=_float(sec, "c3", None, section),
        C=_float(sec, "c", None, section))


def cmd_verify(cp):
    spec, measure = _geometry(cp)
    sec = _sec(cp, "estimate")
    check = sec.get("check", "compact_N")
    if check not in ("compact_N", "compact_inf", "noncompact_N", "noncompact_inf"):
        raise ConfigError(f"[estimate] unknown check {check!r}")
    betas = _vec(sec, "beta", np.array([2.0]), "estimate")
    try:
        params = [_estimate_params(sec, spec, "estimate", float(b)) for b in betas]
    except EstimateError as err:
        raise ConfigError(f"[estimate] {err}") from err
    res, q = _solve(cp, spec, measure)
    window = (_float(sec, "t_min", -np.inf, "estimate"), _float(sec, "t_max", np.inf, "estimate"))
    seed = _seed(cp)
    samples = _int(sec, "samples", 600, "estimate")
    out = _outdir(cp)
    lines, total, rows = [], 0, []
    r = None
    for prm in params:
        if check == "compact_N":
            rep = check_compact_N(spec, measure, res.snapshots, prm, q, res.ut, window,
                                  samples=samples, seed=seed)
        elif check == "compact_inf":
            rep = check_compact_inf(spec, measure, res.snapshots, prm, q, window,
                                    _float(sec, "near_constant_tol", 1e-3, "estimate"),
                                    samples=samples, seed=seed)
        else:
            p = _vec(sec, "p", np.zeros(spec.n), "estimate")
            if r is None:
                r = forward_distance(spec, measure, res.snapshots[0], p)
            rep = check_noncompact(spec, measure, res.snapshots, prm, p, check.split("_")[1],
                                   q, res.ut, r, window, samples=samples, seed=seed)
        lines.append(f"beta={prm.beta:g}")
        lines.extend(rep.summary().splitlines())
        total += rep.violations
        for e in rep.entries:
            rows.append((f"{e.quantity}[beta={prm.beta:g}]", e.min_margin, e.violations,
                         e.empirical_constant))
    with open(os.path.join(out, "verify.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "min_margin", "violations", "empirical_constant"])
        for qn, m, v, c in rows:
            w.writerow([qn, f"{m:.10g}", v, "" if c is None else f"{c:.10g}"])
    _write_summary(out, "verify", lines, total)
    return 3 if total else 0


def cmd_harnack(cp):
    spec, measure = _geometry(cp)
    sec = _sec(cp, "harnack")
    variant = sec.get("variant", "compact")
    try:
        prm = _estimate_params(sec, spec, "harnack", _float(sec, "beta", 2.0, "harnack"))
    except EstimateError as err:
        raise ConfigError(f"[harnack] {err}") from err
    res, q = _solve(cp, spec, measure)
    region = None
    if variant == "noncompact":
        if prm.R is None:
            raise ConfigError("[harnack] noncompact variant needs r")
        region = Ball(tuple(_vec(sec, "p", np.zeros(spec.n), "harnack")), prm.R)
    rng = np.random.default_rng(_seed(cp))
    pairs = random_pairs(res.snapshots, _int(sec, "pairs", 100, "harnack"), rng, region,
                         _float(sec, "t_min", None, "harnack"))
    if variant == "compact" and prm.K is None:
        meas = measure_inputs(spec, measure, torus_region(res.snapshots[0]), prm.N, q,
                              [s.t for s in res.snapshots], seed=_seed(cp),
                              points=res.snapshots[0].points.reshape(-1, 2), curvatures=("K_N",))
        prm = replace(prm, K=meas["K_N"],
                      gamma=prm.gamma if prm.gamma is not None else meas["gamma"],
                      theta=prm.theta if prm.theta is not None else meas["theta"])
    rep = harnack_check(spec, res.snapshots, prm, pairs, q, variant, region)
    out = _outdir(cp)
    rep.write_csv(os.path.join(out, "harnack.csv"))
    lines = [rep.summary()]
    for i in np.nonzero(rep.log_margins < -1e-9)[0][:20]:
        (a, t1), (b, t2) = rep.pairs[i]
        lines.append(f"violation pair x1=({a[0]:.6g}, {a[1]:.6g}) t1={t1:.6g} "
                     f"x2=({b[0]:.6g}, {b[1]:.6g}) t2={t2:.6g}")
    _write_summary(out, "harnack", lines, rep.violations)
    return 3 if rep.violations else 0


def cmd_report(cp):
    out = _outdir(cp)
    files = sorted(f for f in glob.glob(os.path.join(out, "*_summary.txt"))
                   if not f.endswith("report_summary.txt"))
    if not files:
        raise ConfigError(f"no summaries found in {out}; run other commands first")
    lines, total = [], 0
    for f in files:
        name = os.path.basename(f)[: -len("_summary.txt")]
        lines.append(f"== {name} ==")
        with open(f) as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("status: violations="):
                    total += int(line.split("=", 1)[1])
                lines.append(line)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
        fh.write(f"total violations: {total}\n")
    for line in lines:
        print(line)
    print(f"total violations: {total}")
    return 3 if total else 0


HANDLERS = {"validate": cmd_validate, "tensors": cmd_tensors, "constants": cmd_constants,
            "compare": cmd_compare, "solve": cmd_solve, "verify": cmd_verify,
            "harnack": cmd_harnack, "report": cmd_report}


def run(command, config_path, overrides=()):
    """Run one command; returns the exit code."""
    if command not in HANDLERS:
        print(f"error: unknown command {command!r}", file=sys.stderr)
        return 1
    try:
        cp = load_config(config_path, overrides)
        return HANDLERS[command](cp)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except (SolverError, CFLError, FloatingPointError) as err:
        print(f"run failure: {err}", file=sys.stderr)
        return 2
    except (MetricError, ExpressionError, EstimateError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1


def main(argv=None):
    ap = argparse.ArgumentParser(prog="finslerlab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("config")
    ap.add_argument("--set", dest="overrides", action="append", default=[],
                    metavar="SECTION.KEY=VALUE", help="override a config value")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    return run(args.command, args.config, args.overrides)


if __name__ == "__main__":
    sys.exit(main())
