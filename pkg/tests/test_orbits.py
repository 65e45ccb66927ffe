import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochstab.deterministic import distortion_sum
from stochstab.maps import chebyshev
from stochstab.noise import NoiseModel
from stochstab.orbits import (backward_contraction_check, classify_return, default_tau,
                              default_theta0, first_landing, first_landing_batch,
                              h_T_hh_batch, iterate, q_values, recurrence_stats, replay,
                              growth_diagnostic, window_check)


@pytest.fixture(scope="module")
def refl():
    return NoiseModel("additive-reflected", chebyshev())


def test_default_constants():
    th0 = default_theta0(chebyshev())
    assert th0 == pytest.approx(0.04598, abs=5e-6)
    assert default_tau(th0) == pytest.approx(th0 / (10 * math.e))


def test_zero_noise_matches_deterministic(refl):
    orb = iterate(0.123, refl, 0.0, 12)
    m = chebyshev()
    x = 0.123
    for j in range(13):
        assert orb.points[j] == pytest.approx(x, abs=1e-12)
        x = m.f(x)
    assert orb.A[12] == pytest.approx(distortion_sum(m, 0.123, 12), rel=1e-10)


def test_iterate_reproducible(refl):
    a = iterate(0.3, refl, 0.01, 50, seed=4, trial=2)
    b = iterate(0.3, refl, 0.01, 50, seed=4, trial=2)
    assert np.array_equal(a.points, b.points)
    c = iterate(0.3, refl, 0.01, 50, seed=4, trial=3)
    assert not np.array_equal(a.points, c.points)


def test_iterate_validation(refl):
    with pytest.raises(ValueError):
        iterate(1.5, refl, 0.01, 5)
    with pytest.raises(ValueError):
        iterate(0.5, refl, 0.01, -1)


def test_replay_matches_recorded(refl):
    orb = iterate(0.21, refl, 0.01, 30, seed=1)
    pts, logd, A = replay(refl, 0.01, orb.t, np.array([0.21]), 30)
    assert pts[30][0] == orb.points[30]
    assert logd[30][0] == pytest.approx(orb.log_deriv[30])


def test_batch_and_single_landing_agree(refl):
    x0 = np.array([0.11, 0.37, 0.73])
    vals, _ = first_landing_batch(refl, 0.01, 0.01, 500, 3, seed=9, x0=x0)
    for i, x in enumerate(x0):
        single = first_landing(x, refl, 0.01, 0.01, 500, seed=9, trial=i)
        assert single == vals[i]


def test_q_values_oracle():
    # |Dg| dist = e^{-2.5} eps -> q = 3
    q = q_values(np.array([0.0]), np.array([math.exp(-2.5) * 0.01]), 0.01)
    assert q[0] == 3
    assert q_values(np.array([0.0]), np.array([1.0]), 0.01)[0] == 0


def test_recurrence_stats_shapes(refl):
    orb = iterate(0.3, refl, 0.01, 100, seed=2)
    r = recurrence_stats(orb, 0.01, 1.0, 10.0)
    assert r.Q.size == 100 and np.all(np.diff(r.Q) >= 0)


def test_return_events_hold(refl):
    orb = iterate(0.31, refl, 0.01, 200, seed=5)
    th0 = default_theta0(chebyshev())
    n = 0
    for s in range(1, 201):
        for ev in classify_return(orb, s, 0.01, th0 / 4, default_tau(th0)):
            assert ev.holds()
            n += 1
    assert n > 0


def test_h_batch_ordering(refl):
    th0 = default_theta0(chebyshev())
    r = h_T_hh_batch(refl, 0.01, 0.01, 0.02, th0 / 4, default_tau(th0), 300, 50, seed=1)
    assert np.all(r["hh"] <= r["T"])
    assert np.all(r["hinf"] <= r["h"])


def test_growth_diagnostic_positive(refl):
    out = growth_diagnostic(refl, 1e-2, trials=300, cap=300, seed=0)
    assert out["events"] > 0 and out["Lambda_hat"] > 0


def test_backward_contraction_no_violations(refl):
    out = backward_contraction_check(refl, 0.01, trials=50, seed=2)
    assert out["violations"] == 0


@settings(max_examples=40, deadline=None)
@given(st.floats(0.01, 0.99), st.integers(1, 100), st.integers(0, 10_000))
def test_distortion_window_bound(x, n, trial):
    refl = NoiseModel("additive-reflected", chebyshev())
    orb = iterate(x, refl, 0.01, n, seed=7, trial=trial)
    r = window_check(orb, n, npts=33)
    assert r["N"] <= 1.0
    assert abs(r["log_ratio_min"]) <= 1.0 and abs(r["log_ratio_max"]) <= 1.0


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(0, 1000))
def test_orbits_stay_in_interval(x, trial):
    refl = NoiseModel("additive-reflected", chebyshev())
    orb = iterate(x, refl, 0.05, 200, seed=3, trial=trial)
    assert np.all((orb.points >= 0) & (orb.points <= 1))
    assert np.all(np.diff(orb.A) >= 0)
