import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finslerlab import metric as M

BUMP_B = ["0.2*exp(-(x1^2+x2^2))", "0.1*x1"]

finite = st.floats(-0.8, 0.8)
vec = st.tuples(st.floats(-3, 3), st.floats(-3, 3)).filter(lambda v: np.hypot(*v) > 1e-3)


def specs():
    return [M.euclidean(2), M.randers(b=[0.5, 0.0]),
            M.randers(a=[["1 + 0.1*x2^2", "0.1"], ["0.1", "2"]], b=BUMP_B), M.funk_disk(2),
            M.parse_metric("sqrt(y1^2 + y2^2 + x1^2*y2^2)", 2)]


def test_randers_closed_form():
    F = M.randers(b=[0.5, 0.0])
    assert F.F([0, 0], [1, 0]) == pytest.approx(1.5)
    assert F.F([0, 0], [-1, 0]) == pytest.approx(0.5)
    assert F.reversed().F([0, 0], [1, 0]) == pytest.approx(0.5)


def test_funk_closed_form():
    F = M.funk_disk(2)
    assert F.F([0, 0], [0.3, 0.4]) == pytest.approx(0.5)
    # F(x, x) at |x| = s along a ray equals s / (1 - s)
    s = 0.6
    assert F.F([s, 0], [1, 0]) == pytest.approx(1 / (1 - s))


@pytest.mark.parametrize("k", range(5))
@settings(max_examples=25, deadline=None)
@given(x=st.tuples(finite, finite), y=vec, lam=st.floats(0.01, 50))
def test_positive_homogeneity(k, x, y, lam):
    spec = specs()[k]
    x = np.array(x) * (0.9 if spec.domain_radius else 1.0)
    if not spec.in_domain(x):
        return
    y = np.array(y)
    assert spec.F(x, lam * y) == pytest.approx(lam * spec.F(x, y), rel=1e-12)


@pytest.mark.parametrize("k", range(5))
def test_fundamental_tensor_properties(k):
    spec = specs()[k]
    rng = np.random.default_rng(k)
    x = spec.sample_points(rng, 300)
    y = rng.normal(size=(300, 2))
    fd = M.fundamental(spec, x, y)
    assert np.all(np.linalg.eigvalsh(fd.g)[:, 0] > 0)
    np.testing.assert_allclose(fd.g, np.swapaxes(fd.g, -1, -2), atol=1e-12)
    # Cartan tensor is totally symmetric
    for perm in ((1, 0, 2), (0, 2, 1), (2, 1, 0)):
        np.testing.assert_allclose(fd.cartan, np.transpose(fd.cartan, (0,) + tuple(p + 1 for p in perm)),
                                   atol=1e-12)


def test_randers_dual_closed_form_vs_newton_vs_sampling():
    spec = M.randers(b=[0.3, -0.2])
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (50, 2))
    xi = rng.normal(size=(50, 2))
    fast = M.dual_norm(spec, x, xi)
    newton = M.dual_norm(spec, x, xi, method="newton")
    np.testing.assert_allclose(fast, newton, rtol=1e-10)
    th = np.linspace(0, 2 * np.pi, 20001)
    dirs = np.stack([np.cos(th), np.sin(th)], -1)
    Fd = spec.F(np.zeros((len(th), 2)), dirs)
    brute = np.max((xi @ dirs.T) / Fd[None, :], axis=1)
    np.testing.assert_allclose(fast, brute, rtol=1e-6)


def test_legendre_round_trip_general_metric():
    spec = specs()[4]
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, (200, 2))
    y = rng.normal(size=(200, 2))
    y_back, Fs = M.to_tangent(spec, x, M.to_cotangent(spec, x, y))
    np.testing.assert_allclose(y_back, y, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(Fs, spec.F(x, y), rtol=1e-9)


def test_errors():
    spec = M.euclidean(2)
    with pytest.raises(M.ZeroVectorError):
        M.fundamental(spec, [0.0, 0.0], [0.0, 0.0])
    with pytest.raises(M.DomainError):
        M.fundamental(M.funk_disk(2), [1.5, 0.0], [1.0, 0.0])
    with pytest.raises(M.NonPositiveMetricError):
        M.randers(b=[1.5, 0.0])
    with pytest.raises(M.HomogeneityError):
        M.parse_metric("y1^2 + y2^2", 2)
    with pytest.raises(M.MetricError):
        M.parse_metric("sqrt(y1^2 + y2^2) + x1*y1", 2, kind="minkowski")


def test_unit_directions_on_indicatrix():
    spec = M.randers(b=BUMP_B)
    x = np.array([[0.3, -0.2]] * 7)
    V = M.unit_directions(spec, x, np.linspace(0, 6, 7))
    np.testing.assert_allclose(spec.F(x, V), 1.0, rtol=1e-14)


def test_measures():
    mu = M.riemannian_volume([["4", "0"], ["0", "1"]])
    assert mu.sigma(np.array([0.2, 0.1])) == pytest.approx(2.0)
    assert M.lebesgue().sigma(np.array([0.5, 0.5])) == pytest.approx(1.0)
