import numpy as np
import pytest

from finslerlab import metric as M
from finslerlab.grid import ball_grid, torus_grid
from finslerlab.pde import (CFLError, DiscreteOperator, PotentialSpec, SolverConfig, SolverError,
                            nonlinear_laplacian_u, solve_schrodinger)

TWO_PI = 2 * np.pi


def test_flat_operator_on_sine():
    g = torus_grid((TWO_PI, TWO_PI), 128)
    u = g.with_values(np.sin(g.points[..., 0]))
    L = nonlinear_laplacian_u(M.euclidean(2), M.lebesgue(), u)
    assert np.max(np.abs(L.values + np.sin(g.points[..., 0]))) < 1e-3


def test_fourier_mode_decay():
    g = torus_grid((TWO_PI, TWO_PI), 64)
    u0 = g.with_values(1 + 0.5 * np.cos(g.points[..., 0]))
    res = solve_schrodinger(M.euclidean(2), M.lebesgue(), u0, None, SolverConfig(t_end=1.0))
    exact = 1 + 0.5 * np.exp(-1.0) * np.cos(g.points[..., 0])
    assert np.max(np.abs(res.snapshots[-1].values - exact)) / np.max(exact) < 1e-2


def test_operator_is_nonlinear_for_randers():
    # Delta(2u) = 2 Delta u holds (positive homogeneity), Delta(-u) != -Delta u
    g = torus_grid((TWO_PI, TWO_PI), 48)
    X = g.points
    spec = M.randers(b=[0.3, 0.0])
    u = g.with_values(np.sin(X[..., 0]) + 0.5 * np.cos(X[..., 1]))
    L1 = nonlinear_laplacian_u(spec, M.lebesgue(), u).values
    L2 = nonlinear_laplacian_u(spec, M.lebesgue(), u.with_values(2 * u.values)).values
    L3 = nonlinear_laplacian_u(spec, M.lebesgue(), u.with_values(-u.values)).values
    np.testing.assert_allclose(L2, 2 * L1, atol=1e-9)
    assert np.max(np.abs(L3 + L1)) > 1e-2


def test_mass_and_positivity_on_torus():
    g = torus_grid((TWO_PI, TWO_PI), 32)
    X = g.points
    u0 = g.with_values(1 + 0.5 * np.cos(X[..., 0]) * np.sin(X[..., 1]))
    res = solve_schrodinger(M.randers(b=[0.2, 0.1]), M.lebesgue(), u0, None,
                            SolverConfig(t_end=0.5, snapshot_times=(0.25, 0.5)))
    assert np.max(np.abs(res.mass - res.mass[0])) / res.mass[0] < 1e-10
    assert all(np.min(s.values) > 0 for s in res.snapshots)


def test_semi_implicit_matches_explicit():
    g = torus_grid((TWO_PI, TWO_PI), 32)
    u0 = g.with_values(1 + 0.5 * np.cos(g.points[..., 0]))
    spec = M.randers(b=[0.2, 0.0])
    a = solve_schrodinger(spec, M.lebesgue(), u0, None, SolverConfig(t_end=0.3))
    b = solve_schrodinger(spec, M.lebesgue(), u0, None,
                          SolverConfig(t_end=0.3, scheme="semi-implicit", dt=0.005))
    assert np.max(np.abs(a.snapshots[-1].values - b.snapshots[-1].values)) < 5e-3


def test_cfl_violation_rejected():
    g = torus_grid((TWO_PI, TWO_PI), 32)
    u0 = g.with_values(1 + 0.5 * np.cos(g.points[..., 0]))
    with pytest.raises(CFLError):
        solve_schrodinger(M.euclidean(2), M.lebesgue(), u0, None, SolverConfig(t_end=0.1, dt=1.0))


def test_nonpositive_initial_data_rejected():
    g = torus_grid((TWO_PI, TWO_PI), 16)
    with pytest.raises(SolverError):
        solve_schrodinger(M.euclidean(2), M.lebesgue(), g.with_values(np.cos(g.points[..., 0])),
                          None, SolverConfig(t_end=0.1))


def test_potential_bounds():
    q = PotentialSpec("0.1*sin(x1)")
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, TWO_PI, (400, 2))
    gamma, theta = q.bounds(M.euclidean(2), M.lebesgue(), pts)
    # gamma = sup F*(dq) = 0.1, theta = sup(-Delta q) = 0.1 for the flat metric
    assert gamma == pytest.approx(0.1, rel=1e-2)
    assert theta == pytest.approx(0.1, rel=1e-2)
    assert PotentialSpec.constant(0.5).is_constant


def test_dirichlet_ball_holds_boundary(tmp_path):
    g = ball_grid((0, 0), 1.0, 21, boundary="dirichlet")
    u0 = g.with_values(2 + np.cos(g.points[..., 0]))
    res = solve_schrodinger(M.euclidean(2), M.lebesgue(), u0, None, SolverConfig(t_end=0.05))
    boundary = DiscreteOperator(M.euclidean(2), M.lebesgue(), g).ring
    np.testing.assert_allclose(res.snapshots[-1].values[boundary], u0.values[boundary])
    res.write(tmp_path)
    assert any(p.suffix == ".csv" for p in tmp_path.iterdir())
