import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finslerlab import metric as M
from finslerlab.estimates import (EstimateError, EstimateParams, check_compact_N, harnack_P,
                                  harnack_check, li_yau_H, random_pairs, relative_change,
                                  root_term)
from finslerlab.grid import box_grid, torus_grid
from finslerlab.pde import PotentialSpec, SolverConfig, solve_schrodinger

TWO_PI = 2 * np.pi


def test_params_validation_and_defaults():
    p = EstimateParams(N=3, beta=2.0)
    assert p.eps == pytest.approx(0.5)
    assert p.K is None and p.filled().K == 0.0
    with pytest.raises(EstimateError):
        EstimateParams(N=3, beta=1.0)
    with pytest.raises(EstimateError):
        EstimateParams(N=3, beta=2.0, eps=1.5)
    with pytest.raises(EstimateError):
        EstimateParams(N=3, K=-1.0)


def test_root_term_vanishes_for_flat_data_and_clips_theta():
    assert root_term(3, 2.0, 0.5, 0.0, 0.0, 0.0) == 0.0
    assert root_term(3, 2.0, 0.5, 0.0, 0.0, -5.0) == 0.0
    assert root_term(3, 2.0, 0.5, 0.0, 0.0, 1.0) == pytest.approx(np.sqrt(0.5 * 3 * 8))


@settings(max_examples=50, deadline=None)
@given(st.floats(1.05, 4), st.floats(0, 2), st.floats(0, 2), st.floats(-1, 2))
def test_root_term_monotone_in_curvature(beta, K, gamma, theta):
    eps = 2 * (beta - 1) / beta ** 2
    a = root_term(3, beta, eps, K, gamma, theta)
    assert root_term(3, beta, eps, K + 0.5, gamma, theta) >= a
    assert root_term(3, beta, eps, K, gamma + 0.5, theta) >= a


def test_relative_change():
    assert relative_change(0.0, 0.0) == 0.0
    assert relative_change(1.0, 1.2) == pytest.approx(0.2 / 1.2)


def test_constant_solution_has_zero_li_yau_quantity():
    g = torus_grid((TWO_PI, TWO_PI), 24)
    snaps = [g.with_values(np.full(g.shape, 2.0), t=t) for t in (0.4, 0.5, 0.6)]
    H = li_yau_H(M.randers(b=[0.3, 0.0]), snaps, beta=2.0)
    assert np.nanmax(np.abs(H.H[0].values)) < 1e-14


def test_nonpositive_solution_rejected():
    g = box_grid((-1, -1), (1, 1), 16)
    snaps = [g.with_values(g.points[..., 0], t=t) for t in (0.4, 0.5, 0.6)]
    with pytest.raises(EstimateError):
        li_yau_H(M.euclidean(2), snaps)


def test_harnack_constant_flat():
    P, cal = harnack_P(EstimateParams(N=3, beta=2.0, K=0, gamma=0, theta=0))
    assert P == 0.0 and cal is None


@pytest.fixture(scope="module")
def randers_run():
    spec = M.randers(b=[0.3, 0.0])
    q = PotentialSpec("0.1*sin(x1)")
    g = torus_grid((TWO_PI, TWO_PI), 32)
    X = g.points
    u0 = g.with_values(1 + 0.5 * np.cos(X[..., 0]) * np.cos(X[..., 1]), t=0.0)
    ts = tuple(np.round(np.linspace(0.1, 0.6, 6), 10))
    res = solve_schrodinger(spec, M.lebesgue(), u0, q, SolverConfig(t_end=0.6, snapshot_times=ts))
    return spec, q, res


def test_path_action_same_point_bounded_by_potential(randers_run):
    spec, q, res = randers_run
    x = res.snapshots[0].points[10, 10]
    pairs = [((x, 0.2), (x, 0.5))]
    hr = harnack_check(spec, res.snapshots, EstimateParams(N=3, beta=2.0, K=0, gamma=0, theta=0),
                       pairs, q=q)
    assert hr.Q[0] <= 0.3 * 0.1 + 1e-12


def test_understated_hypothesis_flagged(randers_run):
    spec, q, res = randers_run
    with pytest.warns(UserWarning, match="gamma understated"):
        rep = check_compact_N(spec, M.lebesgue(), res.snapshots,
                              EstimateParams(N=3, beta=2.0, gamma=0.0), q=q, ut=res.ut,
                              t_window=(0.2, 0.5), samples=200)
    names = [e.quantity for e in rep.entries]
    assert "hypothesis_gamma" in names
    assert rep.violations >= 1


def test_random_pairs_are_ordered(randers_run):
    _, _, res = randers_run
    pairs = random_pairs(res.snapshots, 20, np.random.default_rng(0), t_min=0.2)
    assert all(a[1] < b[1] and a[1] >= 0.2 for a, b in pairs)
