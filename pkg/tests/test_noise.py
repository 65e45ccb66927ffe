import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochstab.maps import DomainError, Logistic, OffsetLogistic, Tent, chebyshev
from stochstab.noise import (NoiseModel, ValidityError, check_regularity, reflect,
                             trial_stream)


@pytest.fixture
def refl():
    return NoiseModel("additive-reflected", chebyshev())


def test_validity_limits():
    with pytest.raises(ValidityError):
        NoiseModel("additive-uniform", chebyshev()).check_epsilon(0.01)
    NoiseModel("additive-uniform", OffsetLogistic(3.2, 0.1)).check_epsilon(0.09)
    with pytest.raises(ValidityError):
        NoiseModel("additive-reflected", chebyshev()).check_epsilon(-1.0)
    with pytest.raises(DomainError):
        NoiseModel("parameter-uniform", Tent())
    with pytest.raises(DomainError):
        NoiseModel("gaussian", chebyshev())


def test_reflect_triangle_wave():
    assert reflect(1.2) == pytest.approx(0.8)
    assert reflect(-0.3) == pytest.approx(0.3)
    assert reflect(2.25) == pytest.approx(0.25)


def test_uniform_kernel_is_uniform():
    nz = NoiseModel("additive-uniform", OffsetLogistic(3.2, 0.1))
    k = nz.kernel(0.05)
    x = 0.3
    fx = nz.base.f(x)
    assert k.measure(x, [(fx - 0.05, fx + 0.05)]) == pytest.approx(1.0)
    assert k.measure(x, [(fx, fx + 0.01)]) == pytest.approx(0.1)


def test_reflected_kernel_folds_mass(refl):
    # f(1/2) = 1: the law of g is uniform on [1 - eps, 1] with doubled density
    k = refl.kernel(0.1)
    assert k.measure(0.5, [(0.9, 1.0)]) == pytest.approx(1.0)
    assert k.measure(0.5, [(0.95, 1.0)]) == pytest.approx(0.5)


def test_zero_noise_kernel_is_point_mass(refl):
    k = refl.kernel(0.0)
    fx = float(chebyshev().f(0.3))
    assert k.measure(0.3, [(fx, fx)]) == 1.0
    assert k.measure(0.3, [(0.0, fx - 1e-9)]) == 0.0


def test_bad_intervals_rejected(refl):
    k = refl.kernel(0.1)
    with pytest.raises(DomainError):
        k.measure(0.3, [(0.5, 0.4)])
    with pytest.raises(DomainError):
        k.measure(0.3, [(0.1, 0.5), (0.4, 0.6)])


def test_regularity_reflected_passes(refl):
    assert check_regularity(refl.kernel(0.01), 2)["passed"]


def test_regularity_parameter_fails_near_zero():
    r = check_regularity(NoiseModel("parameter-uniform", Logistic(3.9)).kernel(0.01), 2)
    assert not r["passed"] and r["witness"]["x"] < 0.01


def test_regularity_rejects_zero_noise(refl):
    with pytest.raises(ValidityError):
        check_regularity(refl.kernel(0.0), 2)


def test_trial_streams_independent_and_reproducible():
    a = trial_stream(1, 0).random(5)
    assert np.array_equal(a, trial_stream(1, 0).random(5))
    assert not np.array_equal(a, trial_stream(1, 1).random(5))


def test_fold_points_are_folds(refl):
    t = 0.03
    for x in refl.fold_points(t):
        assert chebyshev().f(x) + t == pytest.approx(1.0)


def test_perturbed_map_close_to_base(refl):
    g = refl.sample_map(0.01, np.random.default_rng(0))
    assert g.c0_distance() <= 0.01 + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(1e-4, 0.3), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_kernel_is_probability(x, eps, a, b):
    k = NoiseModel("additive-reflected", chebyshev()).kernel(eps)
    assert k.measure(x, [(0.0, 1.0)]) == pytest.approx(1.0, abs=1e-12)
    lo, hi = sorted((a, b))
    p = k.measure(x, [(lo, hi)])
    assert -1e-12 <= p <= 1 + 1e-12
    # density of the folded law is at most 2 / (2 eps)
    assert p <= (hi - lo) / eps + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(0, 2**31))
def test_samples_stay_in_unit_interval(x, seed):
    k = NoiseModel("additive-reflected", chebyshev()).kernel(0.05)
    y = k.sample(np.full(50, x), np.random.default_rng(seed))
    assert np.all((y >= 0) & (y <= 1))
