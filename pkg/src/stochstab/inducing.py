"""Nice sets around the critical points and Markov inducing times.

A nice set ``V_c^g`` is the component containing ``c`` of
``U = union_{i <= n} g^{-i}(B(delta))``, the points whose random orbit
visits the critical balls within ``n`` steps.  Its ends are found by
pushing intervals forward exactly and cutting them at ball edges and at
turning points, so no grid resolution enters.

The Markov inducing time of ``(x, g)`` is the first ``m`` for which the
component ``J`` of ``x`` mapped by ``g^m`` diffeomorphically onto the nice
set ``V_c^{sigma^m g}`` has non-linearity at most 1 and
``inf_J |Dg^m| >= 2 |V_c^{sigma^m g}| / |V_{c0}^g|``.

Pull-backs are done in offsets from the orbit point, so ``J`` stays
representable long after its width drops below the float spacing at ``x``.
"""

import bisect
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ._io import write_csv
from .deterministic import PreconditionError
from .maps import ScaleError, _quadratic_offset
from .noise import trial_stream
from .stationary import NumericError
from .orbits import _effective, default_tau, default_theta0, h_T_hh_batch

# |Dg^m| beyond this overflows the offset arithmetic
_LOG_DERIV_LIMIT = 690.0


class _Step:
    """Scalar evaluation and offset algebra for one noise family."""

    def __init__(self, noise):
        self.noise = noise
        self.m = noise.base
        self.kind = noise.kind
        self.crit = list(self.m.crit_locations)

    def lap(self, x):
        return bisect.bisect_left(self.crit, x)

    def _sheet(self, x, t):
        w = self.m.f(x) + t
        s = math.floor(w)
        return w, s, (1.0 if s % 2 == 0 else -1.0)

    def g(self, x, t):
        if self.kind == "additive-uniform":
            return self.m.f(x) + t
        if self.kind == "additive-reflected":
            w = self.m.f(x) + t
            return 1.0 - abs((w % 2.0) - 1.0)
        return self.m.f(x) + t * x * (1.0 - x)

    def sign(self, x, t):
        return self._sheet(x, t)[2] if self.kind == "additive-reflected" else 1.0

    def dg(self, y, t, sgn=1.0):
        if self.kind == "parameter-uniform":
            return self.m.df(y) + t * (1.0 - 2.0 * y)
        return sgn * self.m.df(y)

    def d2g(self, y, t, sgn=1.0):
        if self.kind == "parameter-uniform":
            return self.m.d2f(y) - 2.0 * t
        return sgn * self.m.d2f(y)

    def push(self, x, t, h, sgn=1.0):
        """``g(x + h) - g(x)`` for ``x + h`` on the monotone piece of ``x``."""
        if self.kind == "parameter-uniform":
            return (self.m.a + t) * h * (1.0 - 2.0 * x - h)
        return sgn * self.m.f_diff(x, h)

    def pull(self, x, t, eta):
        """Offset ``h`` with ``g(x + h) - g(x) = eta`` on the monotone piece of ``x``."""
        k = self.lap(x)
        if self.kind == "parameter-uniform":
            return _quadratic_offset(self.m.a + t, x, eta, k)
        if self.kind == "additive-reflected":
            w, s, sgn = self._sheet(x, t)
            d = sgn * eta
            if not s <= w + d <= s + 1:
                return None
            return self.m.lap_inverse_offset(k, x, d)
        return self.m.lap_inverse_offset(k, x, eta)


class _Params:
    """Lazily extended noise parameters ``t_0, t_1, ...`` of one trial."""

    def __init__(self, noise, eps, seed, trial, chunk=256):
        self._rng = trial_stream(seed, trial)
        self._noise = noise
        self._eps = eps
        self._chunk = chunk
        self.t = []

    def __getitem__(self, i):
        while i >= len(self.t):
            u = self._rng.random(self._chunk)
            self.t.extend(self._noise.param_from_uniform(u, self._eps).tolist())
        return self.t[i]

    def slice(self, a, b):
        self[b]
        return self.t[a:b]


@dataclass
class NiceComponent:
    """One component ``V_c`` with its certificates."""

    c: int
    lo: float
    hi: float
    depth: int
    inner: tuple
    outer: tuple
    escaped: bool
    stable_since: int = -1
    nested: bool = True

    @property
    def length(self):
        return self.hi - self.lo

    @property
    def sandwich_ok(self):
        return (self.lo <= self.inner[0] and self.inner[1] <= self.hi
                and self.outer[0] <= self.lo and self.hi <= self.outer[1])

    def contains(self, x):
        return self.lo < x < self.hi

    def to_dict(self):
        d = asdict(self)
        d.update(length=self.length, sandwich_ok=self.sandwich_ok)
        return d


@dataclass
class NiceSet:
    delta: float
    depth: int
    components: list
    falsifications: list = field(default_factory=list)
    flags: list = field(default_factory=list)
    history: dict = field(default_factory=dict)

    def component_of(self, x):
        for comp in self.components:
            if comp.contains(x):
                return comp
        return None

    def to_dict(self):
        return {"delta": self.delta, "depth": self.depth,
                "components": [c.to_dict() for c in self.components],
                "falsifications": self.falsifications, "flags": self.flags,
                "history": {str(k): v for k, v in self.history.items()}}


class _Node:
    """Interval of points sharing one monotone branch of ``g^t``.

    ``a``/``b`` are the images at time ``t`` of its near and far end (near
    means closer to ``c``).  The near end entered at time ``birth`` with image
    ``near0``; its position at time 0 is recovered by pulling back along the
    parent's near-end orbit.
    """

    __slots__ = ("parent", "birth", "near0", "t", "a", "b")

    def __init__(self, parent, birth, near0, t, a, b):
        self.parent, self.birth, self.near0 = parent, birth, near0
        self.t, self.a, self.b = t, a, b


class _NiceBuilder:
    """Computes ``V_c^{sigma^m g}(depth)`` for one trial's parameter sequence.

    Each side of ``B(c; delta)`` is searched outwards for the first point not
    absorbed within ``depth`` steps.  Intervals are pushed forward exactly in
    image space and cut at the ball edges and at the critical and fold points
    of each map, so every cut point is exact and no grid is involved.
    """

    def __init__(self, noise, delta, depth=30, stable=10, max_nodes=200_000):
        self.step = _Step(noise)
        self.noise = noise
        self.m = noise.base
        self.delta = delta
        self.depth = depth
        self.stable = stable
        self.max_nodes = max_nodes
        ncrit = len(self.m.critical_points)
        self.balls = [self.m.critical_ball(i, delta) for i in range(ncrit)]
        self.outer = [self.m.critical_ball(i, 2 * delta) for i in range(ncrit)]
        self.edges = sorted(e for ball in self.balls for e in ball)
        b = self.m.lap_bounds
        self.regions = []
        for i in range(ncrit):
            try:
                self.regions.append(self.m.critical_ball(i, 4 * delta))
            except ScaleError:
                self.regions.append((b[i], b[i + 2]))

    def _inside(self, y):
        for lo, hi in self.balls:
            if lo < y < hi:
                return True
        return False

    @staticmethod
    def _cut(a, b, points):
        """Split ``[a, b]`` (either orientation) at ``points`` strictly inside, ordered from ``a``."""
        lo, hi = (a, b) if a <= b else (b, a)
        inner = [p for p in points if lo < p < hi]
        if not inner:
            return [(a, b)]
        if a > b:
            inner = inner[::-1]
        seq = [a] + inner + [b]
        return list(zip(seq[:-1], seq[1:]))

    def _orbit(self, node, upto, ts, root_x):
        """Positions ``x_0..x_upto`` of ``node``'s near end."""
        chain = []
        while node is not None:
            chain.append(node)
            node = node.parent
        g = self.step.g
        xs = [root_x]
        for k in range(len(chain) - 1, -1, -1):
            nd = chain[k]
            target = upto if k == 0 else chain[k - 1].birth
            if nd.parent is not None:
                s = nd.birth
                h = nd.near0 - xs[s]
                offs = [h]
                for j in range(s - 1, -1, -1):
                    h = _pull_robust(self.step, xs[j], ts[j], h)
                    offs.append(h)
                offs.reverse()
                xs = [xs[j] + offs[j] for j in range(s)] + [nd.near0]
            else:
                xs = xs[:1]
            while len(xs) <= target:
                j = len(xs) - 1
                xs.append(g(xs[j], ts[j]))
        return xs

    def _side_end(self, c, side, ts):
        """``(end, escaped, nodes)`` for one side of ``V_c``."""
        n = len(ts)
        lo_b, hi_b = self.balls[c]
        r_lo, r_hi = self.regions[c]
        e, R = (lo_b, r_lo) if side < 0 else (hi_b, r_hi)
        crits = [self.noise.crit_points(t) for t in ts]
        g = self.step.g
        stack = [_Node(None, 0, e, 0, e, R)]
        visited = 0
        while stack:
            node = stack.pop()
            visited += 1
            if visited > self.max_nodes:
                raise NumericError(f"nice-set search exceeded {self.max_nodes} intervals")
            i = node.t
            outs = []
            for p, q in self._cut(node.a, node.b, self.edges):
                mid = 0.5 * (p + q)
                if self._inside(mid):
                    continue
                outs.append(node if p == node.a and q == node.b else
                            (_Node(node.parent, node.birth, node.near0, i, p, q) if p == node.a
                             else _Node(node, i, p, i, p, q)))
            if not outs:
                continue
            if i == n:
                x = self._orbit(outs[0], 0, ts, e)[0]
                return x, False, visited
            children = []
            for nd in outs:
                for p, q in self._cut(nd.a, nd.b, crits[i]):
                    if p == nd.a:
                        ch = _Node(nd.parent, nd.birth, nd.near0, i, p, q)
                    else:
                        ch = _Node(nd, i, p, i, p, q)
                    ch.t, ch.a, ch.b = i + 1, g(p, ts[i]), g(q, ts[i])
                    children.append(ch)
            stack.extend(reversed(children))
        return R, True, visited

    def component(self, c, ts):
        ts = list(ts)[: self.depth]
        n = len(ts)
        lo, esc_lo, _ = self._side_end(c, -1, ts)
        hi, esc_hi, _ = self._side_end(c, 1, ts)
        comp = NiceComponent(c, lo, hi, n, self.balls[c], self.outer[c], esc_lo or esc_hi, -1)
        if not (self.outer[c][0] <= lo and hi <= self.outer[c][1]):
            comp.escaped = True
        return comp

    def history(self, c, ts):
        """Ends ``(lo, hi)`` of ``V_c(n)`` for ``n = 0..len(ts)``."""
        ts = list(ts)[: self.depth]
        return [(lambda k: (k.lo, k.hi))(self.component(c, ts[:n])) for n in range(len(ts) + 1)]

    def nice_set(self, ts):
        comps = [self.component(c, ts) for c in range(len(self.balls))]
        fals = [{"event": "escape", "c": c.c, "lo": c.lo, "hi": c.hi}
                for c in comps if c.escaped]
        return NiceSet(self.delta, min(self.depth, len(ts)), comps, fals)


def _pull_robust(step, x, t, eta):
    """Offset pull-back that tolerates targets a rounding error past a branch end."""
    h = step.pull(x, t, eta)
    k = 0
    while h is None and k < 4:
        eta = eta * (1.0 - 1e-15) - math.copysign(1e-300, eta)
        h = step.pull(x, t, eta)
        k += 1
    if h is None:
        raise NumericError("pull-back left its monotone branch")
    return h


def _stable_since(history, tol=0.0):
    """Last depth at which an end moved by more than ``tol``."""
    last = 0
    for d in range(1, len(history)):
        if max(abs(history[d][0] - history[d - 1][0]),
               abs(history[d][1] - history[d - 1][1])) > tol:
            last = d
    return last


def construct_nice_set(noise, eps, delta, seed=0, trial=0, shift=0, depth=30,
                       delta0=None, history=True, stable_tol=1e-6):
    """``V^{sigma^shift g}`` for the maps of ``(seed, trial)``.

    Leaving ``B(c; 2 delta)`` is a falsification event.  With ``history`` the
    ends are computed at every depth; a component that still grew (by more
    than ``stable_tol``) within the last ten depths is flagged as
    depth-truncated.
    """
    if eps > delta:
        raise ValueError(f"need eps <= delta (eps={eps:g}, delta={delta:g})")
    if delta0 is not None and delta > delta0:
        raise ValueError(f"need delta <= delta0 (delta={delta:g}, delta0={delta0:g})")
    nz = _effective(noise, eps)
    params = _Params(nz, eps, seed, trial)
    builder = _NiceBuilder(nz, delta, depth)
    ts = params.slice(shift, shift + depth)
    ns = builder.nice_set(ts)
    if history:
        for comp in ns.components:
            h = builder.history(comp.c, ts)
            ns.history[comp.c] = h
            comp.stable_since = _stable_since(h, stable_tol)
            comp.nested = all(a[0] >= b[0] and a[1] <= b[1] for a, b in zip(h, h[1:]))
            if comp.depth - comp.stable_since < builder.stable:
                ns.flags.append({"flag": "depth truncated", "c": comp.c,
                                 "stable_since": comp.stable_since})
    return ns


# -- inducing ---------------------------------------------------------------------

@dataclass
class InducingEvent:
    """A certified Markov inducing time, reproducible from ``(x, seed, trial)``."""

    x: float
    seed: int
    trial: int
    m: int
    c: int
    c0: int
    J: tuple
    V: tuple
    V0: tuple
    nonlinearity: float
    inf_deriv: float
    required_deriv: float
    window: str

    def to_dict(self):
        return asdict(self)


def _pullback(step, xs, ts, m, offsets):
    """Offsets at ``x_0`` of the pull-back of ``x_m + offsets`` along the orbit, or ``None``."""
    lo, hi = offsets
    for i in range(m - 1, -1, -1):
        lo = step.pull(xs[i], ts[i], lo)
        if lo is None:
            return None
        hi = step.pull(xs[i], ts[i], hi)
        if hi is None:
            return None
        if lo > hi:
            lo, hi = hi, lo
    return lo, hi


def _window_stats(step, xs, ts, m, h_lo, h_hi, K=33):
    """``(N, inf |Dg^m|, image offsets)`` of ``g^m`` on ``x_0 + [h_lo, h_hi]``."""
    h = np.linspace(h_lo, h_hi, K)
    width = h_hi - h_lo
    D = np.ones(K)
    acc = np.zeros(K)
    for i in range(m):
        x, t = xs[i], ts[i]
        sgn = step.sign(x, t)
        y = x + h
        d1 = step.dg(y, t, sgn)
        with np.errstate(divide="ignore", invalid="ignore"):
            acc = acc + step.d2g(y, t, sgn) / d1 * (D * width)
        D = D * d1
        h = step.push(x, t, h, sgn)
    N = float(np.max(np.abs(acc))) if np.all(np.isfinite(acc)) else math.inf
    return N, float(np.min(np.abs(D))), (float(h[0]), float(h[-1]))


class _Inducer:
    def __init__(self, noise, eps, delta0, depth=30, window="definition",
                 theta0=None, K=33):
        if window not in ("definition", "distortion"):
            raise ValueError("window must be 'definition' or 'distortion'")
        self.noise = _effective(noise, eps)
        self.eps = eps
        self.m = noise.base
        self.delta0 = delta0
        self.step = _Step(self.noise)
        self.builder = _NiceBuilder(self.noise, delta0, depth)
        self.depth = depth
        self.window = window
        self.theta0 = default_theta0(self.m) if theta0 is None else theta0
        self.K = K
        ncrit = len(self.m.critical_points)
        self.inner = [self.m.critical_ball(i, delta0) for i in range(ncrit)]
        self.cand = [self.m.critical_ball(i, 2 * delta0) for i in range(ncrit)]

    def _candidate(self, y):
        for i, (lo, hi) in enumerate(self.cand):
            if lo < y < hi:
                return i
        return -1

    def scan(self, x, params, cap, seed, trial, stats=None):
        """Inducing event for ``x``, or a status string (``'censored'``, ``'precision'``, ``'outside'``)."""
        step = self.step
        V0s = self.builder.nice_set(params.slice(0, self.depth))
        comp0 = V0s.component_of(x)
        if stats is not None:
            stats["escapes"] += sum(c.escaped for c in V0s.components)
        if comp0 is None:
            return "outside"
        xs, ts = [x], []
        logd = 0.0
        y = x
        for m in range(1, cap + 1):
            t = params[m - 1]
            ts.append(t)
            d = abs(step.dg(y, t, step.sign(y, t)))
            logd += math.log(d) if d > 0 else -math.inf
            y = step.g(y, t)
            xs.append(y)
            if logd > _LOG_DERIV_LIMIT:
                return "precision"
            c = self._candidate(y)
            if c < 0:
                continue
            lo, hi = self.inner[c]
            if _pullback(step, xs, ts, m, (lo - y, hi - y)) is None:
                continue
            V = self.builder.component(c, params.slice(m, m + self.depth))
            if stats is not None:
                stats["nice_sets"] += 1
                stats["escapes"] += int(V.escaped)
            if not V.contains(y):
                continue
            J = _pullback(step, xs, ts, m, (V.lo - y, V.hi - y))
            if J is None:
                continue
            N, infd, _ = _window_stats(step, xs, ts, m, J[0], J[1], self.K)
            req = 2.0 * V.length / comp0.length
            if not (N <= 1.0 and infd >= req):
                continue
            if self.window == "distortion" and not self._in_distortion_window(xs, ts, m, J):
                continue
            return InducingEvent(float(x), int(seed), int(trial), m, c, comp0.c,
                                 (x + J[0], x + J[1]), (V.lo, V.hi), (comp0.lo, comp0.hi),
                                 N, infd, req, self.window)
        return "censored"

    def _in_distortion_window(self, xs, ts, m, J):
        pts = np.array(xs[:m])
        tt = np.array(ts[:m])
        D = np.abs(self.noise.deriv(pts, tt))
        logD = np.concatenate([[0.0], np.cumsum(np.log(D))])[:m]
        dist = self.noise.crit_dist(pts, tt)
        with np.errstate(divide="ignore"):
            A = float(np.sum(np.exp(logD) / dist))
        r = self.theta0 / A
        return -r <= J[0] and J[1] <= r


def _start_point(inducer, params, seed, trial, tries=1000):
    """Uniform point of ``V^g`` by rejection from the balls ``B(c; 2 delta0)``."""
    ss = np.random.SeedSequence([int(seed), 2**32 - 2, int(trial)])
    rng = np.random.Generator(np.random.Philox(ss))
    lens = np.array([hi - lo for lo, hi in inducer.cand])
    V = inducer.builder.nice_set(params.slice(0, inducer.depth))
    for _ in range(tries):
        c = int(rng.choice(lens.size, p=lens / lens.sum()))
        lo, hi = inducer.cand[c]
        x = lo + (hi - lo) * rng.random()
        if V.component_of(x) is not None:
            return x
    return None


def markov_inducing_time(x, noise, eps, delta0, cap=10_000, seed=0, trial=0, depth=30,
                         window="definition"):
    """Inducing event for the start ``x`` under the maps of ``(seed, trial)``.

    Returns an :class:`InducingEvent` or one of the status strings
    ``'censored'`` and ``'precision'`` (``|Dg^m|`` overflowed before success).
    A start outside the nice set raises :class:`PreconditionError`.
    """
    inducer = _Inducer(noise, eps, delta0, depth, window)
    params = _Params(inducer.noise, eps, seed, trial)
    r = inducer.scan(float(x), params, cap, seed, trial)
    if r == "outside":
        raise PreconditionError(f"x = {x!r} is not in the nice set of trial {trial}")
    return r


def recertify(event, noise, eps, delta0, depth=30, tol=1e-10):
    """Recompute an event from ``(x, seed, trial)`` alone and check every claim.

    Returns a dict of checks; ``ok`` is their conjunction.
    """
    inducer = _Inducer(noise, eps, delta0, depth, event.window)
    step = inducer.step
    params = _Params(inducer.noise, eps, event.seed, event.trial)
    xs, ts = [event.x], []
    for i in range(event.m):
        ts.append(params[i])
        xs.append(step.g(xs[-1], ts[-1]))
    V = inducer.builder.component(event.c, params.slice(event.m, event.m + depth))
    V0 = inducer.builder.nice_set(params.slice(0, depth)).component_of(event.x)
    y = xs[-1]
    h = _pullback(step, xs, ts, event.m, (V.lo - y, V.hi - y))
    if h is None:
        return {"pullback": False, "ok": False}
    N, infd, img = _window_stats(step, xs, ts, event.m, h[0], h[1], inducer.K)
    img = sorted(img)
    scale = max(V.length, 1e-300)
    checks = {
        "image_lo": abs(y + img[0] - V.lo) <= tol * max(1.0, scale),
        "image_hi": abs(y + img[1] - V.hi) <= tol * max(1.0, scale),
        "component_match": abs(V.lo - event.V[0]) <= tol and abs(V.hi - event.V[1]) <= tol,
        "start_component": V0 is not None and abs(V0.length - (event.V0[1] - event.V0[0])) <= tol,
        "pullback": True,
        "J_match": abs(event.x + h[0] - event.J[0]) <= tol and abs(event.x + h[1] - event.J[1]) <= tol,
        "contains_x": h[0] <= 0.0 <= h[1],
        "nonlinearity": N <= 1.0,
        "derivative": V0 is not None and infd >= 2.0 * V.length / V0.length * (1 - 1e-12),
    }
    checks["ok"] = all(checks.values())
    checks["nonlinearity_value"] = N
    checks["inf_deriv"] = infd
    return checks


# -- tails ------------------------------------------------------------------------

def wilson_interval(k, n, z=1.96):
    """Wilson score interval for a binomial proportion ``k / n``."""
    k = np.asarray(k, dtype=float)
    if n == 0:
        return np.zeros_like(k), np.ones_like(k)
    p = k / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return np.clip(centre - half, 0, 1), np.clip(centre + half, 0, 1)


@dataclass
class TailEstimate:
    trials: int
    cap: int
    times: np.ndarray
    status: list
    events: list
    survival: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    slope: float
    fit_range: tuple
    censored_fraction: float
    precision_fraction: float
    verdict: str
    seconds: float = 0.0
    nice_sets: int = 0
    escapes: int = 0
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {"trials": self.trials, "cap": self.cap, "slope": self.slope,
                "fit_range": self.fit_range, "censored_fraction": self.censored_fraction,
                "precision_fraction": self.precision_fraction, "verdict": self.verdict,
                "events": len(self.events), "seconds": self.seconds,
                "nice_sets": self.nice_sets, "escapes": self.escapes, "warnings": self.warnings,
                "median_m": float(np.median(self.times)) if len(self.times) else None}

    def survival_rows(self):
        ms = np.arange(1, self.survival.size + 1)
        keep = np.unique(np.concatenate([ms[:100], np.geomspace(1, ms[-1], 200).astype(int)]))
        return [(int(m), self.survival[m - 1], self.lower[m - 1], self.upper[m - 1])
                for m in keep]

    def to_csv(self, path):
        return write_csv(path, ["m", "survival", "lower", "upper"], self.survival_rows())


def _fit_tail(times, n, cap, m_min=10, min_count=10):
    ms = np.arange(1, cap + 1)
    counts = np.array([np.sum(times > m) for m in ms]) if times.size < 50 else \
        times.size - np.searchsorted(np.sort(times), ms, side="right")
    surv = counts / n
    lo, hi = wilson_interval(counts, n)
    ok = counts >= min_count
    top = int(ms[ok][-1]) if ok.any() else 0
    pts = np.unique(np.geomspace(m_min, max(top, m_min), 40).astype(int))
    pts = pts[(pts >= m_min) & (pts <= top)]
    if pts.size < 3 or np.any(surv[pts - 1] >= 1):
        return surv, lo, hi, math.nan, (m_min, top), "degenerate tail"
    S = surv[pts - 1]
    w = np.sqrt(n * S / (1.0 - S))
    slope = float(np.polyfit(np.log(pts), np.log(S), 1, w=w)[0])
    return surv, lo, hi, slope, (int(pts[0]), int(pts[-1])), "ok"


def _tail_chunk(args):
    noise, eps, delta0, cap, seed, depth, window, trials = args
    inducer = _Inducer(noise, eps, delta0, depth, window)
    times, status, events = [], [], []
    stats = {"nice_sets": 0, "escapes": 0}
    for trial in trials:
        params = _Params(inducer.noise, eps, seed, trial)
        x = _start_point(inducer, params, seed, trial)
        if x is None:
            times.append(cap + 1)
            status.append("no start")
            continue
        r = inducer.scan(x, params, cap, seed, trial, stats)
        if isinstance(r, InducingEvent):
            times.append(r.m)
            events.append(r)
            status.append("event")
        else:
            times.append(cap + 1)
            status.append(r)
    return times, status, events, stats


def tail_estimate(noise, eps, delta0, trials=1000, cap=10_000, seed=0, depth=30,
                  window="definition", trial_offset=0, workers=1):
    """Survival curve of Markov inducing times with a log-log slope fit.

    Starts are uniform on the nice set.  Trials that hit ``cap`` count as
    censored; trials whose derivative overflowed before an event count as
    ``precision`` and are censored too.  The fit uses ``m >= 10`` up to the
    last time with at least ten survivors.  Each trial owns its random
    streams, so ``workers`` never changes the result.
    """
    import time
    from concurrent.futures import ProcessPoolExecutor

    if eps > delta0:
        raise ValueError(f"need eps <= delta0 (eps={eps:g}, delta0={delta0:g})")
    t0 = time.perf_counter()
    ids = list(range(trial_offset, trial_offset + trials))
    nchunks = max(1, min(int(workers), trials)) if workers > 1 else 1
    chunks = [ids[k::nchunks] for k in range(nchunks)]
    jobs = [(noise, eps, delta0, cap, seed, depth, window, ch) for ch in chunks]
    if nchunks == 1:
        parts = [_tail_chunk(jobs[0])]
    else:
        with ProcessPoolExecutor(nchunks) as pool:
            parts = list(pool.map(_tail_chunk, jobs))
    # reassemble in trial order
    order = {}
    for ch, (tm, st, _, _) in zip(chunks, parts):
        for tr, a, b in zip(ch, tm, st):
            order[tr] = (a, b)
    times = np.array([order[tr][0] for tr in ids], dtype=np.int64)
    status = [order[tr][1] for tr in ids]
    events = sorted((e for p in parts for e in p[2]), key=lambda e: e.trial)
    nice = sum(p[3]["nice_sets"] for p in parts)
    escapes = sum(p[3]["escapes"] for p in parts)
    surv, lo, hi, slope, rng_, verdict = _fit_tail(times, trials, cap)
    cens = float(np.mean(times > cap))
    prec = status.count("precision") / max(trials, 1)
    te = TailEstimate(trials, cap, times, status, events, surv, lo, hi, slope, rng_,
                      cens, prec, verdict, time.perf_counter() - t0, nice, escapes)
    if trials < 1000:
        te.warnings.append("fewer than 1000 trials")
    return te


def inducing_vs_good_return(noise, eps, delta0, trials=200, cap=2000, seed=0, theta=None):
    """Compare ``m_V`` with the good-return time ``h_{delta0}^theta`` on shared samples.

    Good returns at scale ``delta0`` are Markov inducing times, so
    ``m_V <= h`` wherever ``h`` is finite; each exceedance is a violation.
    """
    m = noise.base
    theta0 = default_theta0(m)
    theta = theta0 / 4.0 if theta is None else theta
    inducer = _Inducer(noise, eps, delta0)
    starts, mv = [], []
    for trial in range(trials):
        params = _Params(inducer.noise, eps, seed, trial)
        x = _start_point(inducer, params, seed, trial)
        r = inducer.scan(x, params, cap, seed, trial) if x is not None else None
        starts.append(0.5 if x is None else x)
        mv.append(r.m if isinstance(r, InducingEvent) else cap + 1)
    h = h_T_hh_batch(noise, eps, delta0, delta0, theta, default_tau(theta0), cap, trials,
                     seed, np.array(starts), theta0)["h"]
    mv = np.array(mv)
    finite = h <= cap
    bad = np.nonzero(finite & (mv > h))[0]
    return {"trials": trials, "finite_h": int(finite.sum()), "violations": int(bad.size),
            "witnesses": [{"trial": int(i), "m_V": int(mv[i]), "h": int(h[i])} for i in bad[:10]],
            "theta": theta, "delta0": delta0, "epsilon": eps}


def boundary_niceness_check(noise, eps, delta, trials=20, n_max=20, depth=60, seed=0,
                            rel_tol=1e-13):
    """Count orbits of nice-set boundary points that re-enter a shifted nice set.

    For each boundary point ``p`` of ``V^g(depth)`` and ``1 <= n <= n_max``
    the test is ``g^n(p) not in V^{sigma^n g}(depth - n)``.  A boundary point
    maps onto a boundary point, so landing within the rounding error of
    ``g^n(p)`` (``rel_tol`` times ``|Dg^n(p)|``) of an end is not counted.
    """
    nz = _effective(noise, eps)
    builder = _NiceBuilder(nz, delta, depth)
    step = builder.step
    checks, violations = 0, []
    for trial in range(trials):
        params = _Params(nz, eps, seed, trial)
        ns = builder.nice_set(params.slice(0, depth))
        for comp in ns.components:
            for p in (comp.lo, comp.hi):
                y, D = p, 1.0
                for n in range(1, n_max + 1):
                    t = params[n - 1]
                    D *= abs(step.dg(y, t, step.sign(y, t)))
                    y = step.g(y, t)
                    tol = rel_tol * max(1.0, D)
                    ts = params.slice(n, depth)
                    for c in range(len(builder.balls)):
                        V = builder.component(c, ts)
                        checks += 1
                        if V.lo + tol < y < V.hi - tol:
                            violations.append({"trial": trial, "p": p, "n": n, "c": c,
                                               "y": y, "V": [V.lo, V.hi]})
    return {"checks": checks, "violations": len(violations), "witnesses": violations[:10],
            "delta": delta, "depth": depth}


# -- S integrals ------------------------------------------------------------------

def _uniform_in(intervals, u):
    lens = np.array([b - a for a, b in intervals])
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    s = u * cum[-1]
    j = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(intervals) - 1)
    a = np.array([iv[0] for iv in intervals])
    return a[j] + (s - cum[j]), cum[-1]


def s_integral_estimates(noise, eps, p=1.0, theta=None, delta0=None, levels=4, trials=500,
                         cap=2000, seed=0, tau=None):
    """Monte Carlo estimates of the ``S`` and ``S-hat`` integrals on ``delta_k = delta0 e^-k``.

    ``S(delta; c)`` averages ``(inf_{delta' in [delta, delta0]} h_{delta'}^theta)^p``
    over ``B(c; delta)``; ``S-hat(delta)`` integrates the same quantity (range
    ``[e delta, delta0]``) against ``1 / dist(x, Crit)`` over
    ``B(delta0) minus B(delta)``.  The recursion ratio at level ``k`` is
    ``S(e delta) / (max_c S(delta) + 2 S-hat^{theta/e}(delta))``.  Censored
    return times count as ``cap + 1``.
    """
    m = noise.base
    theta0 = default_theta0(m)
    theta = theta0 / 4.0 if theta is None else theta
    delta0 = m.delta_star if delta0 is None else delta0
    tau = default_tau(theta0) if tau is None else tau
    ncrit = len(m.critical_points)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 2**32 - 3])))

    def hpow(x0, d, d0, th):
        r = h_T_hh_batch(noise, eps, d, d0, th, tau, cap, x0.size, seed, x0, theta0)
        h = r["hinf"].astype(float)
        return h ** p, float(np.mean(h > cap))

    deltas = [delta0 * math.exp(-k) for k in range(0, levels + 1)]
    S = {}
    rows = []
    for k, d in enumerate(deltas):
        per_c = []
        cens = []
        for c in range(ncrit):
            lo, hi = m.critical_ball(c, d)
            x0 = lo + (hi - lo) * rng.random(trials)
            v, cf = hpow(x0, d, delta0, theta)
            per_c.append(float(np.mean(v)))
            cens.append(cf)
        S[k] = per_c
        row = {"k": k, "delta": d, "S": per_c, "S_censored": cens}
        if k >= 1:
            ann = []
            for c in range(ncrit):
                a0, b0 = m.critical_ball(c, delta0)
                a1, b1 = m.critical_ball(c, d)
                ann += [(a0, a1), (b1, b0)]
            x0, total = _uniform_in(ann, rng.random(trials))
            v, cf = hpow(x0, min(math.e * d, delta0), delta0, theta / math.e)
            dist = m.dist_crit(x0)
            Shat = float(total * np.mean(v / dist))
            row.update(S_hat=Shat, S_hat_censored=cf,
                       ratio=max(S[k - 1]) / (max(per_c) + 2.0 * Shat))
        rows.append(row)
    # the uniform bound on the full-scale integral
    balls = [m.critical_ball(c, delta0) for c in range(ncrit)]
    x0, total = _uniform_in(balls, rng.random(trials))
    v, cf = hpow(x0, delta0, delta0, theta)
    full = {"integral": float(total * np.mean(v)), "censored": cf}
    return {"epsilon": eps, "p": p, "theta": theta, "tau": tau, "delta0": delta0,
            "levels": rows, "full_scale": full, "trials": trials, "cap": cap}
