import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finslerlab import jet as J
from finslerlab.expr import Expression, ExpressionError


@pytest.mark.parametrize("src, value", [
    ("1 + 2*3", 7.0),
    ("2^3^2", 512.0),
    ("-2^2", -4.0),
    ("(1 + 2)*3", 9.0),
    ("2*pi", 2 * math.pi),
    ("exp(log(3))", 3.0),
    ("sqrt(16)/4", 1.0),
    ("1e-3*1000", 1.0),
])
def test_expression_values(src, value):
    assert Expression(src)() == pytest.approx(value, rel=1e-15)


@pytest.mark.parametrize("src, pos", [("2x1", 1), ("1 +", 3), ("foo(1)", 0), ("(1", 2)])
def test_expression_errors_report_offset(src, pos):
    with pytest.raises(ExpressionError) as err:
        Expression(src, names=["x1"])
    assert err.value.position == pos


def test_expression_unknown_variable():
    with pytest.raises(ExpressionError):
        Expression("x1 + z", names=["x1", "x2"])


def test_expression_on_arrays():
    e = Expression("x1^2 + sin(x2)", names=["x1", "x2"])
    x1 = np.linspace(0, 1, 5)
    np.testing.assert_allclose(e(x1=x1, x2=x1), x1 ** 2 + np.sin(x1))


def _derivs(src, x0, y0, X=2, Y=3, T=4):
    e = Expression(src, names=["x1", "y1"])
    xs, ys = J.seed(np.array([[x0]]), np.array([[y0]]), X, Y, T)
    return e(x1=xs[0], y1=ys[0])


@settings(max_examples=40, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(0.2, 2.0))
def test_jet_mixed_partials_match_closed_form(x0, y0):
    f = _derivs("exp(x1)*sin(x1*y1) + y1^3", x0, y0)
    # closed forms of d/dy, d2/dy2, d2/dxdy
    fy = math.exp(x0) * x0 * math.cos(x0 * y0) + 3 * y0 ** 2
    fyy = -math.exp(x0) * x0 ** 2 * math.sin(x0 * y0) + 6 * y0
    fxy = (math.exp(x0) * x0 * math.cos(x0 * y0) + math.exp(x0) * math.cos(x0 * y0)
           - math.exp(x0) * x0 * y0 * math.sin(x0 * y0))
    assert f.partial((0, 1))[0] == pytest.approx(fy, rel=1e-12, abs=1e-12)
    assert f.partial((0, 2))[0] == pytest.approx(fyy, rel=1e-12, abs=1e-12)
    assert f.partial((1, 1))[0] == pytest.approx(fxy, rel=1e-12, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 3.0))
def test_jet_elementary_inverses(y0):
    f = _derivs("log(exp(y1)) + sqrt(y1)^2 - 2*y1", 0.0, y0)
    assert abs(f.partial((0, 0))[0]) < 1e-12
    assert abs(f.partial((0, 1))[0]) < 1e-12
    assert abs(f.partial((0, 3))[0]) < 1e-10


def test_jet_profile_truncation():
    b = J.basis(2, 1, 2, 2)
    assert all(sum(m[:2]) <= 1 and sum(m[2:]) <= 2 and sum(m) <= 2 for m in b.idx)
