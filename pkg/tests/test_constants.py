import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from finslerlab import constants as CON
from finslerlab import metric as M
from finslerlab.regions import Ball


def test_euclidean_constants_are_one():
    rep = CON.misalignment_local(M.euclidean(2), np.zeros(2))
    for v in (rep.alpha_M, rep.alpha_m, rep.kappa, rep.kappa_star, rep.rho):
        assert v == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=12, deadline=None)
@given(st.floats(0.05, 0.7))
def test_constant_randers_misalignment(b):
    # closed form ((1 + b) / (1 - b))^2 for a = identity
    rep = CON.misalignment_local(M.randers(b=[b, 0.0]), np.zeros(2))
    assert rep.alpha == pytest.approx(((1 + b) / (1 - b)) ** 2, rel=1e-6)
    assert rep.rho == pytest.approx((1 + b) / (1 - b), rel=1e-6)
    assert rep.alpha_M * rep.alpha_m == pytest.approx(1.0, abs=1e-9)


def test_frozen_values():
    assert CON.misalignment_local(M.randers(b=[0.5, 0.0]), np.zeros(2)).alpha == pytest.approx(9.0, rel=1e-6)
    funk = M.funk_disk(2)
    assert CON.misalignment_local(funk, np.array([0.9, 0.0])).alpha == pytest.approx(361.0, rel=1e-5)
    k, ks, rho = CON.uniform_constants(M.randers(b=[0.5, 0.0]), Ball((0.0, 0.0), 0.5))
    assert (k, ks, rho) == pytest.approx((9.0, 1 / 9.0, 3.0), rel=1e-6)


def test_region_sup_dominates_points():
    spec = M.randers(b=["0.2*exp(-(x1^2+x2^2))", "0"])
    B = Ball((0.0, 0.0), 1.0)
    a = CON.misalignment_region(spec, B)
    rng = np.random.default_rng(0)
    for p in B.sample(rng, 5):
        assert CON.misalignment_local(spec, p).alpha <= a * (1 + 1e-6)


def test_tolerance_range_checked():
    with pytest.raises(ValueError):
        CON.misalignment_local(M.euclidean(2), np.zeros(2), tol=1.0)


def test_profile_csv(tmp_path):
    path = tmp_path / "profile.csv"
    CON.write_profile_csv(path, np.array([[0.1, 0.0], [0.2, 0.0]]), [1.5, 2.5])
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x1", "x2", "alpha"]
    assert float(rows[2][2]) == 2.5
