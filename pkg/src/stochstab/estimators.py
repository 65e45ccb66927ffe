"""scikit-learn style wrappers around the experiment functions.

Hyperparameters live in ``__init__``; ``fit`` runs the experiment and stores
results in trailing-underscore attributes.  ``X`` plays the role it can:
evaluation points for densities, start points or maps elsewhere.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .deterministic import classify_growth, critical_orbit
from .inducing import tail_estimate
from .maps import MapModel, chebyshev
from .noise import NoiseModel
from .stationary import (DensityVector, build_deterministic_operator,
                         build_noisy_operator, stationary_density)


def _points(X):
    x = np.asarray(X, dtype=float)
    return x.ravel() if x.ndim <= 1 or x.shape[1] == 1 else x[:, 0]


def _bin_lookup(density, x, N):
    idx = np.clip((x * N).astype(np.int64), 0, N - 1)
    return density[idx]


class StationaryDensityEstimator(BaseEstimator):
    """Ulam stationary density of the noisy (or, at ``epsilon=0``, deterministic) chain.

    ``predict(X)`` returns the piecewise-constant density at the points ``X``.
    """

    def __init__(self, base=None, noise_kind="additive-reflected", epsilon=0.01, n_bins=2048,
                 tol=1e-10, max_iter=10_000):
        self.base = base
        self.noise_kind = noise_kind
        self.epsilon = epsilon
        self.n_bins = n_bins
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X=None, y=None):
        m = self.base if self.base is not None else chebyshev()
        if self.epsilon == 0:
            op = build_deterministic_operator(m, self.n_bins)
        else:
            noise = NoiseModel(self.noise_kind, m)
            op = build_noisy_operator(m, noise, self.epsilon, self.n_bins)
        res = stationary_density(op, self.tol, self.max_iter)
        self.result_ = res
        self.mass_ = res.density.mass
        self.density_ = res.density.density
        self.edges_ = res.density.edges
        self.converged_ = res.converged
        return self

    def predict(self, X):
        check_is_fitted(self, "density_")
        return _bin_lookup(self.density_, _points(X), self.n_bins)

    def score(self, X, y=None):
        """Mean log density at ``X`` (higher means the sample fits better)."""
        with np.errstate(divide="ignore"):
            return float(np.mean(np.log(self.predict(X))))


class BirkhoffHistogram(BaseEstimator, TransformerMixin):
    """Histogram density of sample points on [0, 1], e.g. a long orbit."""

    def __init__(self, n_bins=256):
        self.n_bins = n_bins

    def fit(self, X, y=None):
        x = _points(X)
        if x.size == 0:
            raise ValueError("need at least one sample")
        counts = np.bincount(np.clip((x * self.n_bins).astype(np.int64), 0, self.n_bins - 1),
                             minlength=self.n_bins)
        self.mass_ = counts / x.size
        self.density_ = DensityVector(self.mass_).density
        self.n_samples_ = int(x.size)
        return self

    def transform(self, X):
        check_is_fitted(self, "density_")
        return _bin_lookup(self.density_, _points(X), self.n_bins)[:, None]


class InducingTailEstimator(BaseEstimator):
    """Survival curve ``P(m_V > m)`` and its log-log slope.

    ``predict(X)`` evaluates the empirical survival at integer times ``X``.
    """

    def __init__(self, base=None, noise_kind="additive-reflected", epsilon=0.005, delta0=0.02,
                 trials=1000, cap=10_000, seed=0, depth=30, window="definition"):
        self.base = base
        self.noise_kind = noise_kind
        self.epsilon = epsilon
        self.delta0 = delta0
        self.trials = trials
        self.cap = cap
        self.seed = seed
        self.depth = depth
        self.window = window

    def fit(self, X=None, y=None):
        if self.epsilon > self.delta0:
            raise ValueError("need epsilon <= delta0")
        m = self.base if self.base is not None else chebyshev()
        noise = NoiseModel(self.noise_kind, m)
        te = tail_estimate(noise, self.epsilon, self.delta0, self.trials, self.cap, self.seed,
                           self.depth, window=self.window)
        self.result_ = te
        self.survival_ = te.survival
        self.slope_ = te.slope
        self.censored_fraction_ = te.censored_fraction
        self.times_ = te.times
        return self

    def predict(self, X):
        check_is_fitted(self, "survival_")
        ms = np.asarray(X, dtype=np.int64).ravel()
        out = np.ones(ms.size)
        pos = ms >= 1
        out[pos] = self.survival_[np.clip(ms[pos], 1, self.cap) - 1]
        return out


class CriticalGrowthClassifier(BaseEstimator, ClassifierMixin):
    """Labels maps by the growth of derivatives along their critical orbits.

    ``X`` is a sequence of :class:`MapModel` objects; labels are ``SC1``,
    ``LD-only``, ``neither`` or ``undetermined``.  ``fit`` only records the
    label set, since the rule has no trainable parameters.
    """

    def __init__(self, horizon=60, ratio_max=0.95):
        self.horizon = horizon
        self.ratio_max = ratio_max

    def fit(self, X=None, y=None):
        self.classes_ = np.array(["LD-only", "SC1", "neither", "undetermined"])
        return self

    def predict(self, X):
        check_is_fitted(self, "classes_")
        out = []
        for m in X:
            if not isinstance(m, MapModel):
                raise TypeError("X must hold MapModel instances")
            labels = [classify_growth(critical_orbit(m, v, self.horizon),
                                      ratio_max=self.ratio_max).verdict
                      for v in m.critical_values]
            # the weakest verdict over the critical points decides
            order = ["SC1", "LD-only", "undetermined", "neither"]
            out.append(max(labels, key=order.index))
        return np.array(out)
