import numpy as np
import pytest

from finslerlab import comparison as CMP
from finslerlab import metric as M
from finslerlab.regions import Ball


def test_ct_branches():
    r = np.array([0.5, 1.0])
    np.testing.assert_allclose(CMP.ct(0, r), 1 / r)
    np.testing.assert_allclose(CMP.ct(1, r), 1 / np.tan(r))
    np.testing.assert_allclose(CMP.ct(-4, r), 2 / np.tanh(2 * r))
    with pytest.raises(ValueError):
        CMP.ct(1, np.array([4.0]))
    with pytest.raises(ValueError):
        CMP.ct(0, np.array([0.0]))


def test_comparison_bound_reduces_to_flat():
    r = np.linspace(0.1, 1, 5)
    np.testing.assert_allclose(CMP.comparison_bound(r, 3, 2, 1.0, 0.0, 0.0), 2 / r)
    np.testing.assert_allclose(CMP.comparison_bound(r, 3, 2, 1.0, 0.0, 0.0, "flag"), 2 / r)


def test_euclidean_distance_and_laplacian():
    e, mu = M.euclidean(2), M.lebesgue()
    df = CMP.distance_field(e, mu, [0, 0], [-1, -1], [1, 1], 81, region=Ball((0.0, 0.0), 1.0))
    m = df.smooth_mask
    rr = np.linalg.norm(df.grid.points, axis=-1)
    assert np.nanmax(np.abs(df.r[m] - rr[m])) < 1e-6
    lap = CMP.nonlinear_laplacian_r(e, mu, df, "gradient").values
    sel = np.isfinite(lap) & (rr > 0.3)
    np.testing.assert_allclose(lap[sel], 1 / rr[sel], rtol=2e-2)


def test_constant_randers_distance_is_asymmetric():
    # geodesics are straight lines, so d(0, x) = F(0, x) = |x| + b.x
    spec, mu = M.randers(b=[0.5, 0.0]), M.lebesgue()
    df = CMP.distance_field(spec, mu, [0, 0], [-1, -1], [1, 1], 81, region=Ball((0.0, 0.0), 1.0))
    pts = df.grid.points
    expect = np.linalg.norm(pts, axis=-1) + 0.5 * pts[..., 0]
    m = df.smooth_mask
    assert np.nanmax(np.abs(df.r[m] - expect[m])) < 1e-4
    i0 = 40
    assert df.r[i0 + 20, i0] == pytest.approx(1.5 * 0.5, abs=1e-4)
    assert df.r[i0 - 20, i0] == pytest.approx(0.5 * 0.5, abs=1e-4)


def test_shooting_and_eikonal_agree():
    spec, mu = M.randers(b=["0.2*exp(-(x1^2+x2^2))", "0"]), M.lebesgue()
    df = CMP.distance_field(spec, mu, [0, 0], [-1, -1], [1, 1], 61,
                            region=Ball((0.0, 0.0), 1.0), cross_check=True)
    assert df.disagreement is not None and df.disagreement < 2e-2


def test_verify_comparison_poincare(tmp_path):
    P = M.poincare_disk()
    g = "4/(1-x1^2-x2^2)^2"
    mu = M.riemannian_volume([[g, "0"], ["0", g]])
    rep = CMP.verify_comparison(P, mu, [0, 0], Ball((0.0, 0.0), 0.6), 3, V_policy="gradient",
                                alpha=1.0, K=1.0, K0=0.0, k=61)
    assert rep.violations == 0 and rep.min_margin > 0
    rep.write_csv(tmp_path / "margins.csv")
    assert (tmp_path / "margins.csv").read_text().splitlines()[0] == "x1,x2,r,laplacian,bound,margin"


def test_understated_curvature_is_detected():
    # claiming K = 0 on the Poincare disk is false; the flat bound 2/r is violated
    P = M.poincare_disk()
    g = "4/(1-x1^2-x2^2)^2"
    mu = M.riemannian_volume([[g, "0"], ["0", g]])
    rep = CMP.verify_comparison(P, mu, [0, 0], Ball((0.0, 0.0), 0.9), 2.0001, V_policy="gradient",
                                alpha=1.0, K=0.0, K0=0.0, k=81)
    assert rep.violations > 0
