import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochstab.maps import (DomainError, Logistic, OffsetLogistic, PowerUnimodal, ScaleError,
                            Tent, chebyshev, map_from_dict, map_from_json)


@pytest.fixture
def cheb():
    return chebyshev()


def test_chebyshev_critical_data(cheb):
    assert cheb.crit_locations.tolist() == [0.5]
    assert cheb.critical_values.tolist() == [1.0]
    assert cheb.ell_max == 2


@pytest.mark.parametrize("delta", [0.02, 0.01, 1e-4, 1e-9])
def test_chebyshev_ball_closed_form(cheb, delta):
    # f(1/2 + r) = 1 - 4 r^2, so B(c; delta) has half-width sqrt(delta) / 2
    lo, hi = cheb.critical_ball(0, delta)
    r = math.sqrt(delta) / 2
    assert lo == pytest.approx(0.5 - r, abs=1e-15)
    assert hi == pytest.approx(0.5 + r, abs=1e-15)
    assert cheb.ball_length(0, delta) == pytest.approx(2 * r, rel=1e-14)
    assert cheb.d_c(0, delta) == pytest.approx(math.sqrt(delta), rel=1e-13)


def test_known_ball_values(cheb):
    assert cheb.critical_ball(0, 0.04) == pytest.approx((0.4, 0.6), abs=1e-15)
    assert cheb.critical_ball(0, 0.01) == pytest.approx((0.45, 0.55), abs=1e-15)


def test_in_ball_is_open(cheb):
    lo, hi = cheb.critical_ball(0, 0.04)
    assert cheb.in_ball(0.5, 0.04) == 0
    assert cheb.in_ball(lo, 0.04) == -1
    assert cheb.in_ball(0.3, 0.04) == -1


def test_tent_ball_is_linear():
    t = Tent()
    lo, hi = t.critical_ball(0, 0.1)
    assert (lo, hi) == pytest.approx((0.45, 0.55))


def test_power_unimodal_order():
    m = PowerUnimodal(4)
    assert m.ell_max == 4
    lo, hi = m.critical_ball(0, 1e-4)
    assert hi - lo == pytest.approx(2 * 0.5 * (1e-4) ** 0.25, rel=1e-8)


def test_offset_logistic_domain():
    with pytest.raises(DomainError):
        OffsetLogistic(4.0, 0.1)
    m = OffsetLogistic(3.2, 0.1)
    assert m.image_margin == pytest.approx(0.1)


def test_large_ball_clips_to_domain():
    assert Logistic(3.2).critical_ball(0, 0.9) == (0.0, 1.0)
    with pytest.raises(ScaleError):
        Logistic(3.2).critical_ball(0, 0.0)


def test_map_roundtrip_json(cheb):
    m2 = map_from_json(cheb.to_json())
    assert isinstance(m2, Logistic) and m2.a == 4.0
    with pytest.raises(DomainError):
        map_from_dict({"family": "nope"})


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0))
def test_preimages_invert_f(y):
    m = chebyshev()
    pre = m.preimages(y)
    assert 1 <= len(pre) <= 2
    for x in pre:
        assert m.f(x) == pytest.approx(y, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 0.49), st.floats(-1e-3, 1e-3))
def test_offset_pullback_roundtrip(x, eta):
    m = chebyshev()
    h = m.lap_inverse_offset(0, x, eta)
    if h is None:
        return
    assert m.f_diff(x, h) == pytest.approx(eta, rel=1e-9, abs=1e-300)


def test_offset_pullback_below_float_spacing():
    m = chebyshev()
    h = m.lap_inverse_offset(0, 0.3, 1e-20)
    assert h > 0 and m.f_diff(0.3, h) == pytest.approx(1e-20, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-10, 0.2), st.floats(1e-10, 0.2))
def test_balls_nest(d1, d2):
    m = chebyshev()
    a, b = sorted((d1, d2))
    lo1, hi1 = m.critical_ball(0, a)
    lo2, hi2 = m.critical_ball(0, b)
    assert lo2 <= lo1 and hi1 <= hi2
