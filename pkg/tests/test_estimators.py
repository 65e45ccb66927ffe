import numpy as np
import pytest
from sklearn.base import clone

from stochstab.estimators import (BirkhoffHistogram, CriticalGrowthClassifier,
                                  InducingTailEstimator, StationaryDensityEstimator)
from stochstab.maps import Logistic, Tent, chebyshev


def test_density_estimator_tent_uniform():
    est = StationaryDensityEstimator(base=Tent(), epsilon=0.0, n_bins=64).fit()
    assert np.allclose(est.predict([0.1, 0.7]), 1.0)
    assert est.score([0.2, 0.3]) == pytest.approx(0.0, abs=1e-12)


def test_density_estimator_clone_and_params():
    est = StationaryDensityEstimator(epsilon=0.05, n_bins=128)
    c = clone(est)
    assert c.get_params()["epsilon"] == 0.05
    c.fit()
    assert c.converged_ and c.mass_.sum() == pytest.approx(1.0)


def test_birkhoff_histogram():
    h = BirkhoffHistogram(n_bins=4).fit(np.array([0.1, 0.1, 0.6, 0.9]))
    assert np.allclose(h.mass_, [0.5, 0, 0.25, 0.25])
    assert h.transform([0.05]).shape == (1, 1)
    with pytest.raises(ValueError):
        BirkhoffHistogram().fit([])


def test_growth_classifier():
    clf = CriticalGrowthClassifier().fit()
    assert clf.predict([chebyshev(), Logistic(3.2)]).tolist() == ["SC1", "neither"]
    with pytest.raises(TypeError):
        clf.predict([0.3])


def test_inducing_tail_estimator():
    est = InducingTailEstimator(trials=20, cap=500, seed=1).fit()
    s = est.predict([0, 1, 10, 10_000])
    assert s[0] == 1.0 and np.all(np.diff(s) <= 0)
    with pytest.raises(ValueError):
        InducingTailEstimator(epsilon=0.1).fit()
