import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epcusp.burgers_profile import (
    ProfileDomainError,
    far_band,
    profile_arrays,
    profile_derivatives,
    profile_value,
    standard_inequality_grid,
    verify_profile_inequalities,
)

finite_y = st.floats(min_value=-1e8, max_value=1e8, allow_nan=False, allow_infinity=False)


def test_known_roots():
    assert profile_value(0.0) == 0.0
    assert profile_value(-2.0) == pytest.approx(1.0, abs=1e-15)
    assert profile_value(1.0) == pytest.approx(-0.6823278038280193, abs=1e-14)
    assert abs(1e-2 * profile_value(1e6) + 1.0) <= 1e-3


def test_nonfinite_rejected():
    for bad in (math.nan, math.inf, -math.inf):
        with pytest.raises(ProfileDomainError):
            profile_value(bad)
    with pytest.raises(ProfileDomainError):
        profile_value(np.array([0.0, math.nan]))


def test_derivatives_at_origin_and_minus_two():
    p = profile_derivatives(0.0)
    assert (p.d1, p.d2, p.d3, p.d4) == (-1.0, 0.0, 6.0, 0.0)
    q = profile_derivatives(-2.0)
    assert q.d1 == pytest.approx(-0.25, abs=1e-15)
    assert q.d2 == pytest.approx(-3.0 / 32.0, abs=1e-15)
    with pytest.raises(ValueError):
        profile_derivatives(0.0, max_order=5)
    assert math.isnan(profile_derivatives(1.0, max_order=2).d3)


def test_frozen_profile_constants():
    y = np.linspace(-5, 5, 200_001)
    _, _, d2, _, d4 = profile_arrays(y)
    assert np.max(np.abs(d2)) == pytest.approx(0.8965, abs=5e-4)
    assert np.max(np.abs(d4)) == pytest.approx(29.8, abs=0.05)


@settings(max_examples=300, deadline=None)
@given(finite_y)
def test_cubic_residual_relative(y):
    w = profile_value(y)
    # the root is exact up to rounding of W itself, i.e. (1 + 3W^2) ulp(W)
    tol = 4e-16 * (1.0 + 3.0 * w * w) * max(abs(w), 1e-300) + 1e-15
    assert abs(y + w + w ** 3) <= tol


@settings(max_examples=200, deadline=None)
@given(finite_y)
def test_odd_and_sign(y):
    w = profile_value(y)
    assert profile_value(-y) == -w
    if y != 0:
        assert np.sign(w) == -np.sign(y)


@settings(max_examples=200, deadline=None)
@given(finite_y, finite_y)
def test_monotone_decreasing(a, b):
    lo, hi = min(a, b), max(a, b)
    assert profile_value(lo) >= profile_value(hi)


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=-1e4, max_value=1e4, allow_nan=False))
def test_implicit_derivative_identities(y):
    p = profile_derivatives(y)
    assert p.d1 == -1.0 / (1.0 + 3.0 * p.w * p.w)
    assert p.d2 == pytest.approx(6.0 * p.w * p.d1 ** 3, rel=1e-14, abs=1e-300)
    low = -1.0 / (1.0 + 3.0 * y * y / np.cbrt(3.0 * y * y + 1.0) ** 2)
    assert low - 1e-15 <= p.d1 <= 0.0


def test_finite_difference_order():
    ys = np.array([-3.0, -0.7, 0.2, 1.5, 4.0])
    errs = []
    for h in (1e-3, 1e-4):
        fd = (profile_value(ys + h) - profile_value(ys - h)) / (2 * h)
        errs.append(np.max(np.abs(fd - profile_arrays(ys)[1])))
    assert math.log10(errs[0] / errs[1]) >= 1.9


def test_far_field_rates():
    for y in (1e6, -1e6):
        p = profile_derivatives(y)
        assert abs(abs(y) ** (2.0 / 3.0) * p.d1 + 1.0 / 3.0) < 1e-3


def test_m3_example_values():
    t = verify_profile_inequalities(np.array([-1.0, 0.0, 1.0]))
    r = t.rows["0605_m_3"]
    assert r["lhs"][1] == pytest.approx(0.0, abs=1e-15)
    assert r["rhs"][1] == 0.0
    assert r["lhs"][2] == pytest.approx(0.9832, abs=5e-4)
    assert r["rhs"][2] == pytest.approx(0.4556, abs=5e-4)
    assert r["margin"][2] > 0


def test_inequality_table_on_standard_grid(tmp_path):
    y = standard_inequality_grid(20_000)
    t = verify_profile_inequalities(y)
    for k, m in t.summary().items():
        assert m >= -1e-10, (k, m, t.argmin_y(k))
    assert t.min_margin("W<y") >= 0
    path = tmp_path / "m.csv"
    t.to_csv(path, stride=50)
    head = path.read_text().splitlines()[0]
    assert head == "inequality_id,y,lhs,rhs,margin"


def test_inequality_input_checks():
    with pytest.raises(ValueError):
        verify_profile_inequalities(np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        verify_profile_inequalities(np.array([0.0, 1.0]), lam=1.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=3.0, max_value=1e8))
def test_far_band(a):
    r = far_band(np.array([-a, a]), 3.0, 0.84)
    assert np.all(r["margin"] >= 0)
