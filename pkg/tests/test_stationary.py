import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochstab.maps import Tent, chebyshev
from stochstab.noise import NoiseModel
from stochstab.orbits import iterate
from stochstab.stationary import (DensityVector, NumericError, UlamOperator, arcsine_masses,
                                  birkhoff_measure, branch_pushforward,
                                  build_deterministic_operator, build_noisy_operator,
                                  l1_distance, pushforward_mass, stability_curve,
                                  stationary_density)


@pytest.fixture(scope="module")
def refl():
    return NoiseModel("additive-reflected", chebyshev())


def test_tent_operator_is_exact():
    # each bin of the tent map covers exactly two bins on dyadic partitions
    P = build_deterministic_operator(Tent(), 8).dense()
    assert np.allclose(P[0], [0.5, 0.5, 0, 0, 0, 0, 0, 0])
    assert np.allclose(P.sum(axis=1), 1.0)


def test_tent_density_uniform():
    res = stationary_density(build_deterministic_operator(Tent(), 64))
    assert np.max(np.abs(res.density.density - 1)) < 1e-12
    assert res.unique


def test_arcsine_masses_sum_to_one():
    a = arcsine_masses(100)
    assert a.sum() == pytest.approx(1.0)
    assert a[0] == pytest.approx(2 / np.pi * np.arcsin(np.sqrt(0.01)))


def test_noisy_operator_rows(refl):
    op = build_noisy_operator(chebyshev(), refl, 0.05, 128)
    assert np.allclose(op.dense().sum(axis=1), 1.0)
    assert op.provenance["row_defect"] < 1e-10


def test_noisy_density_converges(refl):
    res = stationary_density(build_noisy_operator(chebyshev(), refl, 0.05, 256))
    assert res.converged and res.unique
    assert res.density.mass.sum() == pytest.approx(1.0)


def test_density_vector_validation():
    with pytest.raises(ValueError):
        DensityVector([0.5, 0.6])
    with pytest.raises(ValueError):
        DensityVector([-0.1, 1.1])


def test_operator_validation():
    with pytest.raises(ValueError):
        UlamOperator(np.array([[0.5, 0.4], [0.0, 1.0]]))


def test_l1_shape_mismatch():
    with pytest.raises(ValueError):
        l1_distance(np.ones(2) / 2, np.ones(3) / 3)


def test_stability_curve_needs_decreasing(refl):
    with pytest.raises(ValueError):
        stability_curve(chebyshev(), refl, [0.01, 0.05], 64)


def test_stability_curve_zero_eps_is_zero(refl):
    curve = stability_curve(chebyshev(), refl, [0.05, 0.0], 128)
    assert curve.rows[-1][1] == 0.0 and curve.rows[0][1] > 0


def test_birkhoff_matches_iterate(refl):
    # same stream; orbits are short enough that rounding cannot move a point across bins
    orb = iterate(0.3, refl, 0.01, 19, seed=4)
    h = birkhoff_measure(0.3, refl, 0.01, 20, 10, seed=4)
    ref = np.bincount(np.minimum((orb.points * 10).astype(int), 9), minlength=10) / 20
    assert np.allclose(h.mass, ref)


def test_birkhoff_validation(refl):
    with pytest.raises(ValueError):
        birkhoff_measure(0.3, refl, 0.01, 5, 10)


def test_pushforward_mass_is_conserved():
    m = chebyshev()
    z, L, Lh = branch_pushforward([m, m], (0.05, 0.1))
    assert pushforward_mass(z, L) == pytest.approx(0.05, rel=1e-4)


def test_pushforward_needs_monotone():
    with pytest.raises(ValueError):
        branch_pushforward([chebyshev()], (0.4, 0.6))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(8, 128))
def test_push_preserves_mass(seed, N):
    op = build_deterministic_operator(chebyshev(), N)
    d = np.random.default_rng(seed).random(N)
    d /= d.sum()
    out = op.push(d)
    assert out.sum() == pytest.approx(1.0)
    assert np.all(out >= 0)
