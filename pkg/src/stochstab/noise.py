"""Perturbation measures on maps near ``f`` and their transition kernels.

Each noise kind is a one-parameter family ``g_t`` with ``t`` uniform on
``[-1, 1]`` scaled by the noise size:

``additive-uniform``
    ``g_t = f + t``; only for maps whose image keeps a margin of at least
    ``eps`` from both ends of [0, 1].
``additive-reflected``
    ``g_t = R(f + t)`` where ``R`` is the triangle wave folding the line onto
    [0, 1].  ``|g_t'| = |f'|`` everywhere and the fold points are listed as
    critical points of ``g_t``.
``parameter-uniform``
    ``g_s(x) = b + (a + s) x (1 - x)`` over a logistic family.  Its kernel
    collapses at the endpoints; it exists to exercise the regularity checker
    with a model that must fail.

Randomness comes in as explicit :class:`numpy.random.Generator` objects from
:func:`trial_stream`, one independent counter-based stream per trial.
"""

from dataclasses import dataclass

import numpy as np

from .maps import DomainError, Logistic, MapModel

KINDS = ("additive-uniform", "additive-reflected", "parameter-uniform")

# C^1 budget split for the parameter family: sup|x(1-x)| + sup|1-2x| = 5/4
PARAM_SCALE = 0.8


class ValidityError(ValueError):
    """Noise size outside the model's validity range."""


def trial_stream(seed, trial=0):
    """Independent Philox stream for ``(seed, trial)``; draw ``j`` belongs to step ``j``."""
    ss = np.random.SeedSequence([int(seed), int(trial)])
    return np.random.Generator(np.random.Philox(ss))


def reflect(y):
    """Triangle wave folding the real line onto [0, 1]."""
    return 1.0 - abs((y % 2.0) - 1.0)


def reflect_sign(y):
    return np.where((np.asarray(y) % 2.0) < 1.0, 1.0, -1.0)


def image_range(m):
    """``(min f, max f)`` over [0, 1]; extremes sit on lap ends."""
    vals = [m.f(b) for b in m.lap_bounds]
    return float(min(vals)), float(max(vals))


class NoiseModel:
    """A noise kind over a base map with nominal regularity constant ``L``."""

    def __init__(self, kind, base, L=None):
        if kind not in KINDS:
            raise DomainError(f"unknown noise kind {kind!r}; expected one of {KINDS}")
        if not isinstance(base, MapModel):
            raise DomainError("base must be a MapModel")
        if kind == "parameter-uniform" and not isinstance(base, Logistic):
            raise DomainError("parameter-uniform noise needs a logistic family")
        self.kind = kind
        self.base = base
        if L is None:
            L = {"additive-uniform": 1.0, "additive-reflected": 2.0,
                 "parameter-uniform": 1.0}[kind]
        self.L = float(L)
        self._fmin, self._fmax = image_range(base)
        laps = base.lap_bounds
        self._lap_ranges = [tuple(sorted((base.f(laps[k]), base.f(laps[k + 1]))))
                            for k in range(len(laps) - 1)]

    def __repr__(self):
        return f"NoiseModel({self.kind!r}, {self.base!r}, L={self.L})"

    def to_dict(self):
        return {"kind": self.kind, "L": self.L}

    # -- validity -------------------------------------------------------------
    def max_epsilon(self):
        if self.kind == "additive-uniform":
            return min(self._fmin, 1.0 - self._fmax)
        if self.kind == "parameter-uniform":
            b = getattr(self.base, "b", 0.0)
            # (a + s)/4 + b must stay <= 1
            return (4.0 * (1.0 - b) - self.base.a) / PARAM_SCALE
        return np.inf

    def check_epsilon(self, eps):
        if not eps >= 0:
            raise ValidityError(f"epsilon must be non-negative, got {eps}")
        limit = self.max_epsilon()
        if eps > limit:
            raise ValidityError(
                f"{self.kind} needs epsilon <= {limit:.6g} over {self.base!r}; "
                f"got {eps:g} (margin violated by {eps - limit:.3g})")
        return eps

    # -- the family g_t -------------------------------------------------------
    def draw(self, rng, eps, size=None):
        """Noise parameters for ``size`` maps (``t`` for additive, ``s`` for parameter)."""
        return self.param_from_uniform(rng.random(size), eps)

    def param_from_uniform(self, u, eps):
        """Map uniforms on [0, 1) to noise parameters."""
        scale = PARAM_SCALE * eps if self.kind == "parameter-uniform" else eps
        return scale * (2.0 * np.asarray(u) - 1.0)

    def apply(self, x, t):
        if self.kind == "additive-uniform":
            return self.base.f(x) + t
        if self.kind == "additive-reflected":
            return reflect(self.base.f(x) + t)
        return self.base.f(x) + t * x * (1.0 - x)

    def deriv(self, x, t):
        if self.kind == "additive-uniform":
            return self.base.df(x)
        if self.kind == "additive-reflected":
            return reflect_sign(self.base.f(x) + t) * self.base.df(x)
        return self.base.df(x) + t * (1.0 - 2.0 * x)

    def second_deriv(self, x, t):
        if self.kind == "additive-uniform":
            return self.base.d2f(x)
        if self.kind == "additive-reflected":
            return reflect_sign(self.base.f(x) + t) * self.base.d2f(x)
        return self.base.d2f(x) - 2.0 * t

    def apply_with_derivs(self, x, t):
        """``(g(x), g'(x), g''(x))`` in one pass, vectorized over ``x`` and ``t``."""
        fx = self.base.f(x)
        dfx = self.base.df(x)
        d2fx = self.base.d2f(x)
        if self.kind == "additive-uniform":
            return fx + t, dfx, d2fx
        if self.kind == "additive-reflected":
            y = fx + t
            sgn = reflect_sign(y)
            return reflect(y), sgn * dfx, sgn * d2fx
        return fx + t * x * (1.0 - x), dfx + t * (1.0 - 2.0 * x), d2fx - 2.0 * t

    def fold_points(self, t):
        """Fold points of the reflected map ``g_t`` (points where ``f + t`` crosses an integer)."""
        if self.kind != "additive-reflected":
            return []
        out = []
        for k in range(int(np.floor(self._fmin + t)), int(np.ceil(self._fmax + t)) + 1):
            y = k - t
            for lap, (lo, hi) in enumerate(self._lap_ranges):
                if lo < y < hi:
                    out.append(float(self.base.lap_inverse(lap, y)))
        return sorted(out)

    def crit_points(self, t):
        pts = list(self.base.crit_locations) + self.fold_points(t)
        return sorted(pts)

    def crit_dist(self, x, t):
        """``dist(x, Crit(g_t))`` vectorized; 1 when ``g_t`` has no critical point."""
        x = np.asarray(x, dtype=float)
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
        locs = self.base.crit_locations
        if locs.size:
            d = np.min(np.abs(x[..., None] - locs), axis=-1)
        else:
            d = np.ones_like(x)
        if self.kind != "additive-reflected":
            return d
        with np.errstate(invalid="ignore"):
            for k in (0, 1, -1, 2):
                y = k - t
                for lap, (lo, hi) in enumerate(self._lap_ranges):
                    valid = (y > lo) & (y < hi)
                    if not np.any(valid):
                        continue
                    xf = self.base.lap_inverse(lap, np.where(valid, y, lo))
                    d = np.where(valid, np.minimum(d, np.abs(x - xf)), d)
        return d

    def sample_map(self, eps, rng):
        self.check_epsilon(eps)
        t = float(self.draw(rng, eps)) if eps > 0 else 0.0
        return PerturbedMap(self, eps, t)

    def kernel(self, eps):
        self.check_epsilon(eps)
        return TransitionKernel(self, float(eps))


class PerturbedMap:
    """One sampled map ``g_t``; evaluable like a :class:`MapModel`."""

    def __init__(self, noise, eps, t):
        self.noise = noise
        self.eps = eps
        self.t = t

    def __repr__(self):
        return f"PerturbedMap({self.noise.kind!r}, t={self.t:.6g})"

    def f(self, x):
        return self.noise.apply(x, self.t)

    def df(self, x):
        return self.noise.deriv(x, self.t)

    def d2f(self, x):
        return self.noise.second_deriv(x, self.t)

    def eval_with_derivs(self, x):
        x = np.asarray(x, dtype=float)
        if np.any((x < 0) | (x > 1)):
            raise DomainError("points must lie in [0, 1]")
        return self.noise.apply_with_derivs(x, self.t)

    @property
    def critical_points(self):
        return self.noise.crit_points(self.t)

    def c0_distance(self, grid=1025):
        x = np.linspace(0, 1, grid)
        return float(np.max(np.abs(self.f(x) - self.noise.base.f(x))))

    def c1_distance(self, grid=1025):
        x = np.linspace(0, 1, grid)
        base = self.noise.base
        return self.c0_distance(grid) + float(np.max(np.abs(self.df(x) - base.df(x))))


# -- transition kernels -------------------------------------------------------

def _overlap(lo, hi, a, b):
    return np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)


@dataclass(frozen=True)
class TransitionKernel:
    """``p_eps(. | x)``: the law of ``g(x)`` for ``g`` drawn from the noise."""

    noise: NoiseModel
    eps: float

    def support(self, x):
        """Interval carrying the law of ``g(x)`` before any folding."""
        fx = self.noise.base.f(np.asarray(x, dtype=float))
        w = self._halfwidth(x)
        return fx - w, fx + w

    def _halfwidth(self, x):
        x = np.asarray(x, dtype=float)
        if self.noise.kind == "parameter-uniform":
            return PARAM_SCALE * self.eps * x * (1.0 - x)
        return np.full(x.shape, self.eps)

    def cdf(self, z, x, strict=False):
        """``P(g(x) <= z)`` (``P(g(x) < z)`` when ``strict``), broadcasting ``z`` and ``x``."""
        z = np.asarray(z, dtype=float)
        x = np.asarray(x, dtype=float)
        lo, hi = self.support(x)
        w = hi - lo
        degenerate = w <= 0
        wsafe = np.where(degenerate, 1.0, w)
        if self.noise.kind == "additive-reflected":
            total = np.zeros(np.broadcast(z, lo).shape)
            zc = np.clip(z, 0.0, 1.0)
            kmin = int(np.floor((np.min(lo) - 1.0) / 2.0)) - 1
            kmax = int(np.ceil((np.max(hi) + 1.0) / 2.0)) + 1
            for k in range(kmin, kmax + 1):
                total = total + _overlap(lo, hi, 2 * k - zc, 2 * k + zc)
            cont = total / wsafe
            cont = np.where(z >= 1.0, 1.0, np.where(z < 0.0, 0.0, cont))
            point = reflect(lo)
        else:
            cont = np.clip((z - lo) / wsafe, 0.0, 1.0)
            point = lo
        step = (point < z) if strict else (point <= z)
        return np.where(degenerate, step.astype(float), cont)

    def measure(self, x, E):
        """``p_eps(E | x)`` for ``E`` a list of disjoint closed intervals in [0, 1]."""
        E = _validate_intervals(E)
        total = 0.0
        for a, b in E:
            total = total + self.cdf(b, x) - self.cdf(a, x, strict=True)
        return total

    def sample(self, x, rng):
        t = self.noise.draw(rng, self.eps, np.shape(x) or None) if self.eps > 0 else 0.0
        return self.noise.apply(x, t)


def _validate_intervals(E):
    if len(E) == 2 and np.isscalar(E[0]):
        E = [tuple(E)]
    out = sorted((float(a), float(b)) for a, b in E)
    for a, b in out:
        if a > b or a < 0.0 or b > 1.0:
            raise DomainError(f"bad interval [{a}, {b}]")
    for (a1, b1), (a2, b2) in zip(out, out[1:]):
        if a2 < b1:
            raise DomainError("intervals in E overlap")
    return out


def kernel_measure(kernel, x, E):
    return kernel.measure(x, E)


def sample_transition(kernel, x, rng):
    return kernel.sample(x, rng)


def sample_map(noise, eps, rng):
    return noise.sample_map(eps, rng)


def check_regularity(kernel, L, n_x=100, n_lengths=10, n_positions=10):
    """Certify ``p(E|x) <= L (|E| / 2 eps) ** (1/L)`` on an (x, E) grid.

    Lengths run geometrically from ``1e-6 * 2 eps`` to ``2 eps``; for every
    length the intervals slide across the (folded) support and are also pinned
    at 0 and 1.  Returns a dict with ``passed``, ``worst_ratio`` and the
    ``witness`` achieving it.
    """
    eps = kernel.eps
    if not eps > 0:
        raise ValidityError("regularity is defined for eps > 0")
    xs = np.linspace(0.0, 1.0, n_x)
    lengths = 2.0 * eps * np.geomspace(1e-6, 1.0, n_lengths)
    lo, hi = kernel.support(xs)
    if kernel.noise.kind == "additive-reflected":
        s_lo = np.where(lo < 0, 0.0, np.where(hi > 1, np.minimum(lo, 2.0 - hi), lo))
        s_hi = np.where(hi > 1, 1.0, np.where(lo < 0, np.maximum(hi, -lo), hi))
    else:
        s_lo, s_hi = np.clip(lo, 0, 1), np.clip(hi, 0, 1)
    worst, witness = -np.inf, None
    for ell in lengths:
        frac = np.linspace(0.0, 1.0, n_positions)
        starts = s_lo[:, None] - ell / 2 + frac[None, :] * (s_hi - s_lo)[:, None]
        starts = np.concatenate([starts, np.zeros((n_x, 1)),
                                 np.full((n_x, 1), 1.0 - ell)], axis=1)
        a = np.clip(starts, 0.0, 1.0)
        b = np.clip(starts + ell, 0.0, 1.0)
        X = np.broadcast_to(xs[:, None], a.shape)
        p = kernel.cdf(b, X) - kernel.cdf(a, X, strict=True)
        size = b - a
        with np.errstate(divide="ignore", invalid="ignore"):
            bound = L * (size / (2.0 * eps)) ** (1.0 / L)
            ratio = np.where(size > 0, p / bound, 0.0)
        j = np.unravel_index(np.argmax(ratio), ratio.shape)
        if ratio[j] > worst:
            worst = float(ratio[j])
            witness = {"x": float(xs[j[0]]), "E": [float(a[j]), float(b[j])],
                       "p": float(p[j]), "bound": float(bound[j])}
    return {"passed": bool(worst <= 1.0 + 1e-9), "worst_ratio": worst,
            "witness": witness, "L": L, "epsilon": eps, "kind": kernel.noise.kind}
