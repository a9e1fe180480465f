import numpy as np
import pytest

from finslerlab import curvature as CUR
from finslerlab import metric as M
from finslerlab.comparison import ricci_family
from finslerlab.regions import Ball

BUMP_B = ["0.2*exp(-(x1^2+x2^2))", "0"]


def _samples(spec, m, seed):
    rng = np.random.default_rng(seed)
    x = spec.sample_points(rng, m)
    return x, rng.normal(size=(m, 2)), rng.normal(size=(m, 2))


def test_flag_operator_two_routes_agree():
    spec = M.randers(a=[["1 + 0.2*x2^2", "0"], ["0", "1"]], b=BUMP_B)
    x, y, _ = _samples(spec, 50, 0)
    R1, _ = CUR.flag_data(spec, x, y)
    R2 = CUR.flag_operator_spray(spec, x, y)
    np.testing.assert_allclose(R1, R2, atol=1e-9 * max(1.0, np.abs(R2).max()))


def test_conformal_gauss_curvature():
    # exp(2 phi)(dx1^2 + dx2^2), phi = 0.2 sin x1: K = -exp(-2 phi) lap(phi)
    spec = M.riemannian([["exp(0.4*sin(x1))", "0"], ["0", "exp(0.4*sin(x1))"]])
    x, y, u = _samples(spec, 100, 1)
    K = CUR.curvatures(spec, x, y, u)
    expect = 0.2 * np.sin(x[:, 0]) * np.exp(-0.4 * np.sin(x[:, 0]))
    np.testing.assert_allclose(K.flag, expect, atol=1e-9)
    # Ric(y) = K F(y)^2 in dimension two
    np.testing.assert_allclose(K.ricci, expect * spec.F(x, y) ** 2, atol=1e-9)


def test_flag_curvature_is_scale_invariant():
    spec = M.randers(b=BUMP_B)
    x, y, u = _samples(spec, 40, 2)
    K1 = CUR.curvatures(spec, x, y, u).flag
    K2 = CUR.curvatures(spec, x, 3.0 * y, -2.0 * u + 0.5 * y).flag
    np.testing.assert_allclose(K1, K2, atol=1e-9)


def test_constant_randers_is_flat_with_vanishing_S():
    spec = M.randers(b=[0.4, 0.1])
    x, y, u = _samples(spec, 30, 3)
    assert np.max(np.abs(CUR.curvatures(spec, x, y, u).hh)) < 1e-12
    S = CUR.distortion_s(spec, M.lebesgue(), x, y, "S")
    assert np.max(np.abs(S)) < 1e-8


def test_euclidean_non_riemannian_quantities_vanish():
    spec = M.euclidean(2)
    x, V, W = _samples(spec, 20, 4)
    nr = CUR.non_riemannian(spec, M.lebesgue(), x, V, W)
    for a in (nr.T_diff, nr.U_vec, nr.divC):
        assert np.max(np.abs(a)) < 1e-12


def test_mixed_ricci_with_equal_vectors_is_weighted_ricci():
    spec = M.randers(b=BUMP_B)
    x, V, _ = _samples(spec, 20, 5)
    mu = M.lebesgue()
    a = ricci_family(spec, mu, x, V, V, 3, "mixed")
    b = ricci_family(spec, mu, x, V, None, 3, "weighted")
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_k0_bound_is_monotone_in_samples():
    spec = M.randers(b=BUMP_B)
    B = Ball((0.0, 0.0), 1.0)
    k_small = CUR.k0_bound(spec, M.lebesgue(), B.sample, 256)
    k_large = CUR.k0_bound(spec, M.lebesgue(), B.sample, 1024)
    assert 0 < k_small <= k_large


def test_zero_direction_rejected():
    with pytest.raises(M.ZeroVectorError):
        CUR.connection(M.euclidean(2), [0.0, 0.0], [0.0, 0.0])
