import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochstab.deterministic import (CriticalOrbitTable, analyze_map, binding_period,
                                     classify_growth, critical_orbit, distortion_sum,
                                     landing_derivative_check, verify_binding)
from stochstab.maps import Logistic, Tent, chebyshev


def test_distortion_sum_exact():
    # orbit 0 -> 0 with |Df| = 4 and dist = 1/2: (1 + 4 + 16) / (1/2)
    assert distortion_sum(chebyshev(), 0.0, 3) == 42.0
    assert distortion_sum(chebyshev(), 0.0, 0) == 0.0


def test_distortion_sum_hits_critical_point():
    assert distortion_sum(chebyshev(), 0.5, 2) == math.inf


def test_chebyshev_table_geometric():
    tab = critical_orbit(chebyshev(), 1.0, 20)
    assert tab.points[1:].tolist() == [0.0] * 20
    assert np.allclose(tab.deriv, 4.0 ** np.arange(21), rtol=1e-12)
    assert tab.W[-1] == pytest.approx(4 / 3 * (1 - 4.0 ** -21), rel=1e-14)


def test_tent_table():
    tab = critical_orbit(Tent(), 1.0, 10)
    assert np.allclose(tab.deriv, 2.0 ** np.arange(11))


def test_not_a_critical_value():
    with pytest.raises(ValueError):
        critical_orbit(chebyshev(), 0.3, 5)


def test_classify_geometric_is_sc1():
    g = classify_growth(CriticalOrbitTable.from_derivatives(2.0 ** np.arange(30)))
    assert g.verdict == "SC1"
    assert g.S == pytest.approx(2.0, rel=1e-12)


def test_classify_polynomial_is_ld_only():
    n = np.arange(1, 41, dtype=float)
    g = classify_growth(CriticalOrbitTable.from_derivatives(1e4 * n))
    assert g.verdict == "LD-only"


def test_classify_bounded_is_neither():
    g = classify_growth(CriticalOrbitTable.from_derivatives(np.ones(30)))
    assert g.verdict == "neither"


def test_attracting_cycle_is_neither():
    m = Logistic(3.2)
    g = classify_growth(critical_orbit(m, float(m.critical_values[0]), 200))
    assert g.verdict == "neither"
    assert g.warnings


def test_classify_needs_window():
    with pytest.raises(ValueError):
        classify_growth(np.ones(5))


def test_binding_period_chebyshev():
    r = binding_period(chebyshev(), 1.0, 1e-5)
    assert r.M >= 1 and r.branch in ("out", "in", "deep")
    assert r.deriv_next == pytest.approx(4.0 ** (r.M + 1), rel=1e-12)


def test_verify_binding_deterministic_passes():
    m = chebyshev()
    M = binding_period(m, 1.0, 1e-5).M
    audit = verify_binding(m, None, 1.0, 0.0, M)
    assert audit.passed


def test_landing_derivative_check_positive():
    out = landing_derivative_check(chebyshev(), 1e-3, samples=2000, horizon=100,
                                   rng=np.random.default_rng(1))
    assert out["events"] > 0 and out["kappa0"] > 0


def test_analyze_map_summary():
    out, tables = analyze_map(chebyshev(), horizon=30, delta=1e-5)
    (entry,) = out["critical_values"]
    assert entry["classification"]["verdict"] == "SC1"
    assert entry["binding"]["M"] >= 1
    assert len(tables) == 1 and tables[0].N == 30


@settings(max_examples=100, deadline=None)
@given(st.floats(0.001, 0.999), st.integers(1, 12), st.integers(1, 12))
def test_distortion_cocycle(x, n, k):
    m = chebyshev()
    y, D = x, 1.0
    for _ in range(n):
        D *= abs(m.df(y))
        y = m.f(y)
    lhs = distortion_sum(m, x, n + k)
    rhs = distortion_sum(m, x, n) + D * distortion_sum(m, y, k)
    if math.isfinite(lhs):
        assert lhs == pytest.approx(rhs, rel=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(10, 60))
def test_W_monotone(N):
    tab = critical_orbit(chebyshev(), 1.0, N)
    # terms fall below the float spacing of W eventually, so only >= holds
    assert np.all(np.diff(tab.W) >= 0)
