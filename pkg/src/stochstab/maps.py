"""Interval maps with non-flat critical points.

A :class:`MapModel` is a closed-form self-map of ``[0, 1]`` that knows its
critical points, their orders, and its monotone laps.  Everything downstream
(random orbits, Ulam operators, nice sets) is built on the handful of
primitives defined here: evaluation with derivatives, lap inverses, critical
balls ``B(c; delta)`` (the component of ``f^{-1}(B_delta(f(c)))`` containing
``c``) and the scaled distance ``dist_*``.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from ._roots import bisect_monotone, bisect_scalar


class DomainError(ValueError):
    """Input outside the unit interval or otherwise malformed."""


class ScaleError(ValueError):
    """A radius or neighborhood is too large (or too small) for the request."""


@dataclass(frozen=True)
class CriticalPoint:
    """A critical point ``c`` of order ``order``.

    ``coefficient`` is the normal-form constant: near ``c``,
    ``|f'(x)| ~ coefficient * |x - c| ** (order - 1)``.
    """

    location: float
    order: float = 2.0
    coefficient: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.location < 1.0:
            raise DomainError(f"critical point must lie in (0, 1), got {self.location}")
        if not self.order > 1.0:
            raise DomainError(f"critical order must exceed 1, got {self.order}")


def _check_domain(x):
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError("points must lie in [0, 1]")
    return arr


class MapModel:
    """Base class for the shipped map families.

    Subclasses implement :meth:`f`, :meth:`df`, :meth:`d2f` with plain
    arithmetic so that they work on Python floats (fast scalar loops) and on
    numpy arrays alike, and they declare ``critical_points``.  Instances are
    immutable; caches hold only derived values.
    """

    family = "abstract"
    admissible = True

    def __init__(self, delta_star=None):
        if delta_star is not None and not delta_star > 0:
            raise ScaleError("delta_star must be positive")
        self._delta_star = delta_star
        self._ball_cache = {}
        self._auto_delta_star = None

    # -- to be provided by families ------------------------------------
    @property
    def params(self):
        raise NotImplementedError

    @property
    def critical_points(self):
        raise NotImplementedError

    def f(self, x):
        raise NotImplementedError

    def df(self, x):
        raise NotImplementedError

    def d2f(self, x):
        raise NotImplementedError

    # -- identity ---------------------------------------------------------
    def _key(self):
        return (self.family, tuple(sorted(self.params.items())), self._delta_star)

    def __eq__(self, other):
        return isinstance(other, MapModel) and self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.params.items())
        return f"{type(self).__name__}({args})"

    # -- structure ----------------------------------------------------------
    def eval_with_derivs(self, x):
        """Return ``(f(x), f'(x), f''(x))``; raises :class:`DomainError` off [0, 1]."""
        arr = _check_domain(x)
        if arr.ndim == 0:
            xf = float(arr)
            return self.f(xf), self.df(xf), self.d2f(xf)
        return self.f(arr), self.df(arr), self.d2f(arr)

    @property
    def crit_locations(self):
        return np.array([c.location for c in self.critical_points])

    @property
    def critical_values(self):
        return np.array([self.f(c.location) for c in self.critical_points])

    @property
    def ell_max(self):
        return max(c.order for c in self.critical_points)

    @property
    def lap_bounds(self):
        return (0.0,) + tuple(c.location for c in self.critical_points) + (1.0,)

    def lap_orientation(self, k):
        b = self.lap_bounds
        return 1.0 if self.f(b[k + 1]) >= self.f(b[k]) else -1.0

    def lap_inverse(self, k, y):
        """Preimage of ``y`` in lap ``k`` (clipped to the lap ends when unattained)."""
        b = self.lap_bounds
        return bisect_monotone(self.f, b[k], b[k + 1], y)

    def f_diff(self, x, h):
        """``f(x + h) - f(x)``; families override this to avoid cancellation."""
        return self.f(x + h) - self.f(x)

    def lap_inverse_offset(self, k, x, eta):
        """Offset ``h`` with ``x + h`` in lap ``k`` and ``f(x + h) - f(x) = eta``, else ``None``.

        ``x`` must lie in lap ``k``.  Working in offsets keeps pull-backs of
        intervals far below the spacing of floats near ``x`` meaningful.
        """
        b = self.lap_bounds
        lo, hi = sorted((self.f(b[k]), self.f(b[k + 1])))
        y = self.f(x) + eta
        if not lo <= y <= hi:
            return None
        return float(self.lap_inverse(k, y)) - x

    def preimages(self, y):
        """All preimages of scalar ``y``, one per lap that attains it."""
        out = []
        b = self.lap_bounds
        for k in range(len(b) - 1):
            lo, hi = sorted((self.f(b[k]), self.f(b[k + 1])))
            if lo <= y <= hi:
                out.append(float(self.lap_inverse(k, y)))
        return out

    def _crit_index(self, c):
        if isinstance(c, CriticalPoint):
            for i, cp in enumerate(self.critical_points):
                if cp == c:
                    return i
            raise DomainError(f"{c} is not a critical point of {self!r}")
        return int(c)

    def is_maximum(self, i):
        return self.lap_orientation(i) > 0

    # -- critical balls -----------------------------------------------------
    def critical_ball(self, c, delta):
        """Endpoints ``(lo, hi)`` of ``B(c; delta)``.

        Each endpoint is found on one monotone side of ``c``; if ``f`` stays
        within ``delta`` of ``f(c)`` up to a domain endpoint the ball is
        clipped there.  Running into a neighbouring critical point raises
        :class:`ScaleError`.
        """
        i = self._crit_index(c)
        delta = float(delta)
        if not delta > 0:
            raise ScaleError("radius must be positive")
        key = (i, delta)
        hit = self._ball_cache.get(key)
        if hit is not None:
            return hit
        b = self.lap_bounds
        c_loc = b[i + 1]
        v = self.f(c_loc)
        target = v - delta if self.is_maximum(i) else v + delta
        radius = self._ball_radius(i, delta)
        ends = []
        for k, edge, side in ((i, b[i], -1.0), (i + 1, b[i + 2], 1.0)):
            if abs(self.f(edge) - v) < delta:
                if edge not in (0.0, 1.0):
                    raise ScaleError(
                        f"B(c;{delta:g}) escapes the isolating neighbourhood of c={c_loc:g}")
                ends.append(edge)
            elif radius is not None:
                ends.append(float(c_loc + side * radius))
            else:
                ends.append(float(self.lap_inverse(k, target)))
        out = (ends[0], ends[1])
        if len(self._ball_cache) < 4096:
            self._ball_cache[key] = out
        return out

    def ball_length(self, c, delta):
        """``|B(c; delta)|``, vectorized over ``delta``."""
        i = self._crit_index(c)
        d = np.asarray(delta, dtype=float)
        b = self.lap_bounds
        c_loc = b[i + 1]
        radius = self._ball_radius(i, d)
        if radius is not None:
            # summing half-widths avoids cancellation against c
            out = np.minimum(radius, b[i + 2] - c_loc) + np.minimum(radius, c_loc - b[i])
            return float(out) if out.ndim == 0 else out
        if d.ndim == 0:
            lo, hi = self.critical_ball(i, float(d))
            return hi - lo
        v = self.f(c_loc)
        target = v - d if self.is_maximum(i) else v + d
        lo = self.lap_inverse(i, target)
        hi = self.lap_inverse(i + 1, target)
        return hi - lo

    def _ball_radius(self, i, delta):
        """Closed-form half-width of a symmetric critical ball, if the family has one."""
        return None

    def d_c(self, c, delta):
        """``D_c(delta) = delta / |B(c; delta)|``."""
        return delta / self.ball_length(c, delta)

    def in_ball(self, x, delta):
        """Index of the critical ball ``B(c; delta)`` containing ``x``, else -1."""
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape, -1, dtype=int)
        for i in range(len(self.critical_points)):
            lo, hi = self.critical_ball(i, delta)
            out = np.where((x > lo) & (x < hi), i, out)
        return out if out.ndim else int(out)

    def dist_crit(self, x):
        x = np.asarray(x, dtype=float)
        locs = self.crit_locations
        if locs.size == 0:
            return np.ones_like(x)
        return np.min(np.abs(x[..., None] - locs), axis=-1)

    def dist_cv(self, x):
        x = np.asarray(x, dtype=float)
        return np.min(np.abs(x[..., None] - self.critical_values), axis=-1)

    def nearest_crit(self, x):
        x = np.asarray(x, dtype=float)
        return np.argmin(np.abs(x[..., None] - self.crit_locations), axis=-1)

    # -- reference scale ----------------------------------------------------
    @property
    def delta_star(self):
        if self._delta_star is not None:
            return self._delta_star
        if self._auto_delta_star is None:
            self._auto_delta_star = default_delta_star(self)
        return self._auto_delta_star

    def with_delta_star(self, delta_star):
        d = self.to_dict()
        d["delta_star"] = delta_star
        return map_from_dict(d)

    def dist_star(self, x):
        """Scaled distance: ``dist(f(x), CV)`` inside ``B(delta_*)``, else ``delta_*``."""
        x = np.asarray(x, dtype=float)
        ds = self.delta_star
        inside = self.in_ball(x, ds) >= 0
        val = np.where(inside, self.dist_cv(self.f(x)), ds)
        return val if val.ndim else float(val)

    # -- serialization ------------------------------------------------------
    def to_dict(self):
        return {
            "family": self.family,
            "params": dict(self.params),
            "delta_star": self._delta_star,
            "critical_points": [{"c": c.location, "order": c.order}
                                for c in self.critical_points],
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _quadratic_offset(a, x, eta, k):
    """Small root ``h`` of ``a h (1 - 2x - h) = eta`` keeping ``x + h`` in lap ``k``."""
    beta = a * (1.0 - 2.0 * x)
    disc = beta * beta - 4.0 * a * eta
    if disc < 0.0:
        return None
    r = math.sqrt(disc)
    if beta == 0.0 and r == 0.0:
        return 0.0
    # both roots are mirror images about 1/2; pick the one on lap k
    h = 2.0 * eta / (beta + r) if beta >= 0.0 else 2.0 * eta / (beta - r)
    if k == 1 and beta == 0.0:
        h = r / (2.0 * a)
    y = x + h
    if not (0.0 <= y <= 0.5 if k == 0 else 0.5 <= y <= 1.0):
        return None
    return h


class Logistic(MapModel):
    """``f(x) = a x (1 - x)``, one quadratic critical point at 1/2."""

    family = "logistic"

    def __init__(self, a=4.0, delta_star=None):
        if not 0.0 < a <= 4.0:
            raise DomainError(f"logistic parameter must lie in (0, 4], got {a}")
        self.a = float(a)
        super().__init__(delta_star)
        self._crit = (CriticalPoint(0.5, 2.0, 2.0 * self.a),)

    @property
    def params(self):
        return {"a": self.a}

    @property
    def critical_points(self):
        return self._crit

    def f(self, x):
        return self.a * x * (1.0 - x)

    def df(self, x):
        return self.a * (1.0 - 2.0 * x)

    def d2f(self, x):
        return -2.0 * self.a + 0.0 * x

    def _ball_radius(self, i, delta):
        return np.sqrt(delta / self.a)

    def f_diff(self, x, h):
        return self.a * h * (1.0 - 2.0 * x - h)

    def lap_inverse_offset(self, k, x, eta):
        return _quadratic_offset(self.a, x, eta, k)

    def lap_inverse(self, k, y):
        s = np.clip(1.0 - 4.0 * np.asarray(y, dtype=float) / self.a, 0.0, 1.0)
        r = 0.5 * np.sqrt(s)
        return 0.5 - r if k == 0 else 0.5 + r


class OffsetLogistic(Logistic):
    """``f(x) = b + a x (1 - x)`` with ``b > 0`` and ``a/4 + b < 1``.

    The image sits strictly inside (0, 1), so plain additive noise of size
    below the margin never leaves the interval.
    """

    family = "offset_logistic"

    def __init__(self, a, b, delta_star=None):
        if not b > 0 or not a / 4.0 + b < 1.0 or not a > 0:
            raise DomainError(f"need a > 0, b > 0, a/4 + b < 1 (a={a}, b={b})")
        self.b = float(b)
        super().__init__(a, delta_star)

    @property
    def params(self):
        return {"a": self.a, "b": self.b}

    @property
    def image_margin(self):
        return min(self.b, 1.0 - self.b - self.a / 4.0)

    def f(self, x):
        return self.b + self.a * x * (1.0 - x)

    def lap_inverse(self, k, y):
        return super().lap_inverse(k, np.asarray(y, dtype=float) - self.b)


class Tent(MapModel):
    """Tent map ``s * min(x, 1 - x)``; not smooth, so never admissible.

    Shipped only as an oracle for the Ulam solver (the full tent preserves
    Lebesgue measure).
    """

    family = "tent"
    admissible = False

    def __init__(self, slope=2.0, delta_star=None):
        if not 0.0 < slope <= 2.0:
            raise DomainError("tent slope must lie in (0, 2]")
        self.slope = float(slope)
        super().__init__(delta_star)
        self._crit = (CriticalPoint(0.5, 2.0, 1.0),)

    @property
    def params(self):
        return {"slope": self.slope}

    @property
    def critical_points(self):
        return self._crit

    def f(self, x):
        return self.slope * (0.5 - abs(x - 0.5))

    def df(self, x):
        return self.slope * np.sign(0.5 - x)

    def d2f(self, x):
        return 0.0 * x

    def _ball_radius(self, i, delta):
        return delta / self.slope

    def lap_inverse(self, k, y):
        y = np.clip(np.asarray(y, dtype=float) / self.slope, 0.0, 0.5)
        return y if k == 0 else 1.0 - y


class PowerUnimodal(MapModel):
    """``f(x) = 1 - |2x - 1| ** exponent`` with a declared critical order.

    The declared order defaults to the true exponent; declaring a different
    one produces a deliberately inconsistent model for admissibility audits.
    """

    family = "power"

    def __init__(self, exponent=2.0, order=None, delta_star=None):
        if not exponent > 1.0:
            raise DomainError("exponent must exceed 1")
        self.exponent = float(exponent)
        self.order = float(order if order is not None else exponent)
        super().__init__(delta_star)
        coef = self.exponent * 2.0 ** self.exponent
        self._crit = (CriticalPoint(0.5, self.order, coef),)

    @property
    def params(self):
        return {"exponent": self.exponent, "order": self.order}

    @property
    def critical_points(self):
        return self._crit

    def f(self, x):
        return 1.0 - abs(2.0 * x - 1.0) ** self.exponent

    def df(self, x):
        u = 2.0 * x - 1.0
        p = self.exponent
        return -2.0 * p * np.sign(u) * abs(u) ** (p - 1.0)

    def d2f(self, x):
        u = abs(2.0 * x - 1.0)
        p = self.exponent
        with np.errstate(divide="ignore"):
            return -4.0 * p * (p - 1.0) * u ** (p - 2.0)

    def _ball_radius(self, i, delta):
        return 0.5 * delta ** (1.0 / self.exponent)

    def lap_inverse(self, k, y):
        r = np.clip(1.0 - np.asarray(y, dtype=float), 0.0, 1.0) ** (1.0 / self.exponent)
        return 0.5 * (1.0 - r) if k == 0 else 0.5 * (1.0 + r)


class Identity(MapModel):
    """The identity map; no critical points.  Used as a degenerate oracle."""

    family = "identity"
    admissible = False

    def __init__(self, delta_star=None):
        super().__init__(delta_star if delta_star is not None else 0.25)

    @property
    def params(self):
        return {}

    @property
    def critical_points(self):
        return ()

    def f(self, x):
        return 1.0 * x

    def df(self, x):
        return 1.0 + 0.0 * x

    def d2f(self, x):
        return 0.0 * x

    def lap_inverse(self, k, y):
        return np.clip(np.asarray(y, dtype=float), 0.0, 1.0)


FAMILIES = {
    "logistic": Logistic,
    "offset_logistic": OffsetLogistic,
    "tent": Tent,
    "power": PowerUnimodal,
    "identity": Identity,
}


def chebyshev(delta_star=None):
    """The full logistic map ``4x(1-x)``."""
    return Logistic(4.0, delta_star=delta_star)


def map_from_dict(spec):
    try:
        cls = FAMILIES[spec["family"]]
    except KeyError as exc:
        raise DomainError(f"unknown map family {spec.get('family')!r}") from exc
    m = cls(**spec.get("params", {}), delta_star=spec.get("delta_star"))
    declared = spec.get("critical_points")
    if declared is not None:
        locs = [float(c["c"]) for c in declared]
        if len(locs) != len(m.critical_points) or not np.allclose(
                locs, m.crit_locations, rtol=1e-12, atol=1e-15):
            raise DomainError("declared critical points do not match the family")
    return m


def map_from_json(text):
    return map_from_dict(json.loads(text))


# -- reference scale and admissibility ---------------------------------------

def _dist_star_derivative_ok(m, delta, grid=1000):
    for i in range(len(m.critical_points)):
        lo, hi = m.critical_ball(i, delta)
        x = np.linspace(lo, hi, grid + 2)[1:-1]
        d = m.dist_cv(m.f(x))
        keep = d > 0
        x, d = x[keep], d[keep]
        # worst map in the d-neighbourhood loses d from |f'|
        if np.any(np.abs(m.df(x)) - d < m.d_c(i, d)):
            return False
    return True


def default_delta_star(m, grid=1000):
    """Largest dyadic ``delta <= 1/4`` passing the disjointness and derivative checks."""
    if not m.critical_points:
        return 0.25
    delta = 0.25
    while delta > 2.0 ** -40:
        try:
            balls = sorted(m.critical_ball(i, 2 * delta)
                           for i in range(len(m.critical_points)))
            disjoint = all(balls[j][1] <= balls[j + 1][0] for j in range(len(balls) - 1))
            if disjoint and _dist_star_derivative_ok(m, delta, grid):
                return delta
        except ScaleError:
            pass
        delta /= 2.0
    raise ScaleError("no admissible delta_star found")


@dataclass(frozen=True)
class AdmissibleSpaceParams:
    """Constants of the admissible-space conditions (distortion and order bounds)."""

    C: float
    n: int
    orders: tuple
    delta: float
    O1: float
    O2: float

    def __post_init__(self):
        if not (self.C > 0 and self.delta > 0 and self.O1 > 0 and self.O2 > 0):
            raise DomainError("C, delta, O1, O2 must be positive")
        if self.O1 > self.O2:
            raise DomainError("need O1 <= O2")
        if len(self.orders) != self.n or any(not l > 1 for l in self.orders):
            raise DomainError("need n orders, each > 1")


@dataclass
class AdmissibilityReport:
    worst_ratio_i: float
    pass_i: bool
    margin_lower: float
    margin_upper: float
    pass_ii: bool
    count_ok: bool
    details: list = field(default_factory=list)

    @property
    def passed(self):
        return self.pass_i and self.pass_ii and self.count_ok


def _pairs(m, grid):
    x = np.linspace(0.0, 1.0, grid)
    X, Y = np.meshgrid(x, x, indexing="ij")
    dx = m.dist_crit(X)
    sep = np.abs(X - Y)
    ok = (2.0 * sep < dx) & (sep > 0)
    return X[ok], Y[ok], dx[ok], sep[ok]


def check_admissibility(params, maps, grid=200, tol=1e-9):
    """Audit a sample of maps against the admissible-space conditions.

    Condition (i) is checked on grid pairs with ``2|x-y| < dist(x, Crit)``;
    condition (ii) on a grid inside ``delta`` of each critical point.  Never
    raises on failure: the report carries worst ratios and margins.
    """
    maps = list(maps)
    if not maps:
        raise DomainError("need at least one map")
    if grid < 2:
        raise DomainError("grid must have at least 2 points")
    worst = 0.0
    lower = math.inf
    upper = math.inf
    count_ok = True
    details = []
    for m in maps:
        x, y, dx, sep = _pairs(m, grid)
        with np.errstate(divide="ignore", invalid="ignore"):
            lr = np.abs(np.log(np.abs(m.df(x)) / np.abs(m.df(y))))
            ratio = lr * dx / (params.C * sep)
        r = float(np.nanmax(ratio)) if ratio.size else 0.0
        worst = max(worst, r)
        crit = m.critical_points
        if len(crit) != params.n:
            count_ok = False
        for cp, ell in zip(crit, params.orders):
            t = np.linspace(-params.delta, params.delta, 2 * grid + 1)
            t = t[t != 0]
            xs = cp.location + t
            xs = xs[(xs >= 0) & (xs <= 1)]
            d = np.abs(xs - cp.location)
            scaled = np.abs(m.df(xs)) / d ** (ell - 1.0)
            lo_m = float(np.min(scaled) - params.O1)
            hi_m = float(params.O2 - np.max(scaled))
            lower = min(lower, lo_m)
            upper = min(upper, hi_m)
            details.append({"map": repr(m), "c": cp.location,
                            "margin_lower": lo_m, "margin_upper": hi_m})
        details.append({"map": repr(m), "worst_ratio_i": r})
    scale = max(1.0, params.O2)
    pass_ii = lower >= -tol * scale and upper >= -tol * scale
    return AdmissibilityReport(worst, worst <= 1.0, lower, upper, pass_ii, count_ok, details)


def distortion_constant(m, grid=400):
    """Empirical constant for both one-step distortion bounds of ``m``.

    The larger of the log-derivative ratio constant over admissible pairs and
    ``sup |f''/f'| * 2 dist(., Crit)``; for a quadratic critical point the
    latter is exactly 2.
    """
    x, y, dx, sep = _pairs(m, grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        k1 = np.nanmax(np.abs(np.log(np.abs(m.df(x)) / np.abs(m.df(y)))) * dx / sep)
        z = np.linspace(0.0, 1.0, 20 * grid)
        dz = m.dist_crit(z)
        z, dz = z[dz > 0], dz[dz > 0]
        k2 = np.nanmax(np.abs(m.d2f(z) / m.df(z)) * 2.0 * dz)
    return float(max(k1, k2))


def theta_defaults(C):
    """Default distortion-window constants ``theta0 = theta1 = min(1/(6e), 1/(4eC))``."""
    val = 1.0 / (6.0 * math.e)
    if C > 0:
        val = min(val, 1.0 / (4.0 * math.e * C))
    return val


def misiurewicz_offset_logistic(b, preperiod=2, bracket=None):
    """Parameter ``a`` with ``f^preperiod(v)`` on the repelling fixed point of ``b + a x(1-x)``.

    Found by bisection on ``a -> f_a^k(v) - p(a)`` inside ``bracket``.
    """
    def fixed(a):
        return ((a - 1.0) + math.sqrt((a - 1.0) ** 2 + 4.0 * a * b)) / (2.0 * a)

    def gap(a):
        v = b + a / 4.0
        for _ in range(preperiod):
            v = b + a * v * (1.0 - v)
        return v - fixed(a)

    hi_a = 4.0 * (1.0 - b) - 1e-9
    if bracket is None:
        grid = np.linspace(3.2, hi_a, 4000)
        vals = np.array([gap(a) for a in grid])
        idx = np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]
        if idx.size == 0:
            raise ScaleError("no Misiurewicz parameter found")
        j = idx[-1]
        bracket = (grid[j], grid[j + 1])
    return bisect_scalar(gap, bracket[0], bracket[1], 0.0, xtol=1e-15)
