"""Random orbits of the skew product ``F(x, g) = (g_0(x), sigma g)``.

Single orbits are recorded in full by :func:`iterate`.  Monte Carlo runs go
through :func:`run_batch`, which advances many trials at once and hands the
state at every time ``s`` to an observer that records events and retires
finished trials.  Trial ``i`` always consumes the stream
``trial_stream(seed, offset + i)``, one uniform per step, so results do not
depend on batch composition.
"""

import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _io
from .maps import distortion_constant, theta_defaults
from .noise import NoiseModel, trial_stream

E = math.e


def _log_abs(x):
    with np.errstate(divide="ignore"):
        return np.log(np.abs(x))


@functools.lru_cache(maxsize=64)
def default_theta0(m):
    return theta_defaults(distortion_constant(m))


def default_tau(theta0):
    """``tau = theta0 / (10 e)``: scale times are the steps with ``|Dg^s| >= A(x, g, s) / 10``."""
    return theta0 / (10.0 * E)


def _effective(noise, eps):
    """At ``eps = 0`` every kind is the unperturbed map; use the plain additive form."""
    if eps == 0 and noise.kind != "additive-uniform":
        return NoiseModel("additive-uniform", noise.base, noise.L)
    return noise


def initial_points(seed, n, lo=0.0, hi=1.0, tag=0):
    """Uniform starting points from a stream disjoint from every trial stream."""
    ss = np.random.SeedSequence([int(seed), 2**32 - 1, int(tag)])
    rng = np.random.Generator(np.random.Philox(ss))
    return lo + (hi - lo) * rng.random(n)


# -- single orbits --------------------------------------------------------------

@dataclass
class RandomOrbit:
    """A recorded orbit ``x_j = g^j(x_0)``, ``j = 0..n``.

    ``t[j]`` parametrizes ``g_j`` (``n + 1`` draws so ``Crit(g_n)`` is known),
    ``log_deriv[j] = log|Dg^j(x_0)|``, ``A[j] = A(x_0, g, j)``,
    ``dist[j] = dist(x_j, Crit(g_j))`` and ``step_log_deriv[j] = log|g_j'(x_j)|``.
    """

    x0: float
    eps: float
    noise: NoiseModel
    t: np.ndarray
    points: np.ndarray
    log_deriv: np.ndarray
    A: np.ndarray
    dist: np.ndarray
    step_log_deriv: np.ndarray

    @property
    def n(self):
        return len(self.points) - 1

    @property
    def map(self):
        return self.noise.base

    def tail(self, m):
        """``F^m(x, g)`` as a new orbit of length ``n - m``."""
        return _record(self.noise, self.eps, self.points[m], self.t[m:])

    def to_rows(self, eps_ball=None):
        m = self.map
        eb = self.eps if eps_ball is None else eps_ball
        inside = (m.in_ball(self.points, eb) >= 0) if eb > 0 else np.zeros(self.n + 1, bool)
        q = np.append(q_values(self.step_log_deriv, self.dist[:-1], eb), -1) if eb > 0 \
            else np.full(self.n + 1, -1)
        for j in range(self.n + 1):
            yield (j, self.points[j], self.log_deriv[j], self.A[j], self.dist[j],
                   q[j], bool(inside[j]))

    def to_csv(self, path, eps_ball=None):
        header = ["j", "x", "log_abs_deriv", "A", "dist_crit", "q", "in_ball_eps"]
        return _io.write_csv(path, header, self.to_rows(eps_ball))


def replay(noise, eps, t, y, n=None, second=False):
    """Push points ``y`` through ``g_0, ..., g_{n-1}`` given parameters ``t``.

    Returns ``(points, log_deriv, A)`` each of shape ``(n + 1,) + y.shape``;
    with ``second=True`` also the nonlinearity ``(g^n)''/(g^n)'`` at every ``y``.
    """
    noise = _effective(noise, eps)
    y = np.array(y, dtype=float)
    n = len(t) if n is None else n
    pts = np.empty((n + 1,) + y.shape)
    logd = np.empty_like(pts)
    A = np.empty_like(pts)
    ld = np.zeros_like(y)
    acc = np.zeros_like(y)
    dsigned = np.ones_like(y)
    nl = np.zeros_like(y)
    x = y
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        for j in range(n + 1):
            pts[j], logd[j], A[j] = x, ld, acc
            if j == n:
                break
            tj = t[j]
            dist = noise.crit_dist(x, tj)
            acc = acc + np.exp(ld - _log_abs(dist))
            gx, dg, d2g = noise.apply_with_derivs(x, tj)
            if second:
                nl = nl + d2g / dg * dsigned
                dsigned = dsigned * dg
            ld = ld + _log_abs(dg)
            x = np.clip(gx, 0.0, 1.0)
    if second:
        return pts, logd, A, nl
    return pts, logd, A


def _record(noise, eps, x0, t):
    noise_eff = _effective(noise, eps)
    n = len(t) - 1
    pts, logd, A = replay(noise_eff, eps, t, np.array([x0]), n)
    pts, logd, A = pts[:, 0], logd[:, 0], A[:, 0]
    dist = np.array([float(noise_eff.crit_dist(pts[j], t[j])) for j in range(n + 1)])
    with np.errstate(invalid="ignore"):
        step = np.diff(logd)
    return RandomOrbit(float(x0), float(eps), noise, np.asarray(t, float), pts, logd, A,
                       dist, step)


def iterate(x0, noise, eps, n, rng=None, seed=0, trial=0):
    """Record ``n`` steps of an ``eps``-random orbit from ``x0``.

    Noise parameters come from ``rng`` (default ``trial_stream(seed, trial)``),
    one uniform per map ``g_0, ..., g_n``.
    """
    if not 0.0 <= x0 <= 1.0:
        raise ValueError("x0 must lie in [0, 1]")
    if n < 0:
        raise ValueError("n must be non-negative")
    noise.check_epsilon(eps)
    if eps > 0:
        rng = rng if rng is not None else trial_stream(seed, trial)
        t = noise.param_from_uniform(rng.random(n + 1), eps)
    else:
        t = np.zeros(n + 1)
    return _record(noise, eps, x0, t)


# -- distortion windows ---------------------------------------------------------

def distortion_window(orbit, n, theta0=None):
    """``J_{x,n} = [x - theta0/A, x + theta0/A]`` clipped to [0, 1]."""
    theta0 = default_theta0(orbit.map) if theta0 is None else theta0
    A = orbit.A[n]
    x = orbit.x0
    if not np.isfinite(A):
        return (x, x)
    if A <= 0:
        raise ValueError("window needs A(x, g, n) > 0 (n >= 1)")
    r = theta0 / A
    return (max(0.0, x - r), min(1.0, x + r))


def window_check(orbit, n, theta0=None, npts=101):
    """Measure ``N(g^n | J)`` and the two-sided derivative comparison on ``J_{x,n}``.

    ``N`` is ``sup |(g^n)''/(g^n)'| * |J|`` over ``npts`` points of ``J``;
    ``ratio`` is ``(|Dg^n(y)|/A(y,g,n)) (A(x,g,n)/|Dg^n(x)|)`` at interior points.
    """
    theta0 = default_theta0(orbit.map) if theta0 is None else theta0
    lo, hi = distortion_window(orbit, n, theta0)
    if hi == lo:
        # orbit through a critical point: the window is the single point x
        return {"J": (lo, hi), "N": 0.0, "log_ratio_min": 0.0, "log_ratio_max": 0.0,
                "points": 0, "ok": True, "degenerate": True}
    y = np.linspace(lo, hi, npts)
    _, logd, A, nl = replay(orbit.noise, orbit.eps, orbit.t, y, n, second=True)
    width = hi - lo
    with np.errstate(invalid="ignore"):
        N = float(np.max(np.abs(nl)) * width) if width > 0 else 0.0
        interior = y[1:-1] if npts > 2 else y
        sl = slice(1, -1) if npts > 2 else slice(None)
        lr = (logd[n][sl] - np.log(A[n][sl])) - (orbit.log_deriv[n] - math.log(orbit.A[n]))
    return {"J": (lo, hi), "N": N, "log_ratio_min": float(np.min(lr)),
            "log_ratio_max": float(np.max(lr)), "points": int(interior.size),
            "ok": bool(N <= 1.0 and np.all(np.abs(lr) <= 1.0))}


# -- return classification -----------------------------------------------------

@dataclass
class ReturnEvent:
    s: int
    kind: str
    c: int
    deriv_log: float
    A: float
    scale: float
    params: dict = field(default_factory=dict)

    def holds(self):
        """Re-check the defining inequality from the stored quantities."""
        D = math.exp(self.deriv_log)
        p = self.params
        if self.kind == "good":
            return p["theta"] * D >= self.A * self.scale
        if self.kind == "close":
            return p["theta"] * D >= self.A * self.scale
        if self.kind == "scale":
            return p["theta0"] * D >= E * p["tau"] * self.A
        if self.kind == "landing":
            return self.c >= 0
        raise ValueError(self.kind)

    def to_dict(self):
        return dict(self.__dict__)


def classify_return(orbit, s, delta, theta, tau, theta0=None):
    """All return kinds holding at time ``s`` (``good``, ``close``, ``scale``, ``landing``)."""
    if not 1 <= s <= orbit.n:
        raise ValueError("s must lie in 1..n")
    m = orbit.map
    theta0 = default_theta0(m) if theta0 is None else theta0
    D_log = float(orbit.log_deriv[s])
    D = math.exp(D_log) if D_log < 700 else math.inf
    A = float(orbit.A[s])
    xs = orbit.points[s]
    c = int(m.in_ball(xs, delta))
    out = []
    if c >= 0:
        bl = m.ball_length(c, delta)
        if theta * D >= A * bl:
            out.append(ReturnEvent(s, "good", c, D_log, A, bl,
                                   {"theta": theta, "delta": delta}))
        if np.all(m.in_ball(orbit.points[:s], delta) < 0):
            out.append(ReturnEvent(s, "landing", c, D_log, A, bl, {"delta": delta}))
    dist = float(orbit.dist[s])
    if theta * D >= A * dist:
        out.append(ReturnEvent(s, "close", c, D_log, A, dist, {"theta": theta}))
    if theta0 * D >= E * tau * A:
        out.append(ReturnEvent(s, "scale", c, D_log, A, E * tau / theta0,
                               {"theta0": theta0, "tau": tau}))
    return out


def write_events(path, events):
    lines = [json.dumps(_io.to_jsonable(ev), sort_keys=True) for ev in events]
    from pathlib import Path
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


# -- recurrence statistics -------------------------------------------------------

def q_values(step_log_deriv, dist, eps):
    """``q_eps``: least integer ``q >= 0`` with ``|Dg_0(x)| dist(x, Crit(g_0)) >= e^{-q} eps``."""
    with np.errstate(divide="ignore"):
        logprod = np.asarray(step_log_deriv) + np.log(np.asarray(dist))
    raw = math.log(eps) - logprod
    q = np.ceil(raw - 1e-12)
    q = np.where(np.isfinite(q), np.maximum(q, 0), np.inf)
    return q


@dataclass
class RecurrenceStats:
    q: np.ndarray
    Q: np.ndarray
    Gamma: np.ndarray
    bad: bool
    horizon_truncated: bool
    m: float
    kappa: float

    def to_dict(self):
        return {"Q_total": float(self.Q[-1]) if self.Q.size else 0.0,
                "Gamma_total": int(self.Gamma[-1]) if self.Gamma.size else 0,
                "bad": self.bad, "horizon_truncated": self.horizon_truncated,
                "m": self.m, "kappa": self.kappa}


def recurrence_stats(orbit, eps, kappa, m):
    """``q_eps`` per step, running ``Q_0^s`` and ``Gamma_0^s``, and the ``Bad_m`` verdict.

    ``Bad_m`` needs ``Q_0^s > min(m, kappa Gamma_0^s)`` for every ``s`` and
    ``lim Q_0^s >= m``.  A verdict that later steps could still change is
    flagged ``horizon_truncated``.
    """
    n = orbit.n
    q = q_values(orbit.step_log_deriv, orbit.dist[:n], eps)
    Q = np.cumsum(q)
    inside = orbit.map.in_ball(orbit.points[:n], eps) >= 0 if n else np.zeros(0, bool)
    Gamma = np.cumsum(inside.astype(int))
    if n == 0:
        return RecurrenceStats(q, Q, Gamma, False, True, m, kappa)
    fails = ~(Q > np.minimum(m, kappa * Gamma))
    if fails.any():
        return RecurrenceStats(q, Q, Gamma, False, False, m, kappa)
    settled = Q[-1] > m
    return RecurrenceStats(q, Q, Gamma, bool(settled), not settled, m, kappa)


# -- batch engine ---------------------------------------------------------------

class _Bank:
    def __init__(self, seed, trials, offset=0, chunk=256):
        self.gens = [trial_stream(seed, offset + i) for i in range(trials)]
        self.buf = np.empty((trials, chunk))
        self.chunk = chunk

    def uniforms(self, s, idx):
        k = s % self.chunk
        if k == 0:
            for i in idx:
                self.buf[i] = self.gens[i].random(self.chunk)
        return self.buf[idx, k]


def run_batch(noise, eps, x0, cap, seed, observer, offset=0):
    """Advance all trials up to time ``cap`` calling ``observer(s, idx, x, logd, A, dist)``.

    The observer returns a boolean mask over ``idx`` of trials to keep.
    """
    noise.check_epsilon(eps)
    nz = _effective(noise, eps)
    x = np.array(x0, dtype=float)
    B = x.size
    bank = _Bank(seed, B, offset) if eps > 0 else None
    idx = np.arange(B)
    logd = np.zeros(B)
    A = np.zeros(B)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        for s in range(cap + 1):
            t = nz.param_from_uniform(bank.uniforms(s, idx), eps) if bank else np.zeros(idx.size)
            dist = nz.crit_dist(x, t)
            keep = np.asarray(observer(s, idx, x, logd, A, dist), dtype=bool)
            if s == cap:
                break
            if not keep.all():
                idx, x, logd, A, dist, t = (a[keep] for a in (idx, x, logd, A, dist, t))
            if idx.size == 0:
                break
            gx, dg, _ = nz.apply_with_derivs(x, t)
            A = A + np.exp(logd - np.log(dist))
            logd = logd + np.log(np.abs(dg))
            x = np.clip(gx, 0.0, 1.0)


# -- first landing ---------------------------------------------------------------

def first_landing_batch(noise, eps, delta, cap, trials, seed=0, x0=None):
    """``l_delta`` for many trials; censored entries hold ``cap + 1``."""
    m = noise.base
    x0 = initial_points(seed, trials) if x0 is None else np.asarray(x0, float)
    out = np.full(x0.size, cap + 1, dtype=np.int64)

    def obs(s, idx, x, logd, A, dist):
        hit = m.in_ball(x, delta) >= 0
        out[idx[hit]] = s
        return ~hit

    run_batch(noise, eps, x0, cap, seed, obs)
    return out, out > cap


def first_landing(x, noise, eps, delta, cap, rng=None, seed=0, trial=0):
    """``l_delta(x, g)``, or the string ``"exceeded cap"``."""
    if cap < 1:
        raise ValueError("cap must be >= 1")
    m = noise.base
    nz = _effective(noise, eps)
    rng = rng if rng is not None else trial_stream(seed, trial)
    xs = float(x)
    for s in range(cap + 1):
        if m.in_ball(xs, delta) >= 0:
            return s
        t = float(nz.param_from_uniform(rng.random(), eps)) if eps > 0 else 0.0
        xs = float(np.clip(nz.apply(xs, t), 0.0, 1.0))
    return "exceeded cap"


def exponential_tail_fit(values, censored, min_frac=1e-3):
    """Slope ``-eta`` of ``log P(l > n)`` against ``n`` (least squares)."""
    values = np.asarray(values)
    total = values.size
    ns = np.arange(0, int(values.max()) + 1)
    surv = np.array([(values > n).sum() / total for n in ns])
    ok = surv >= min_frac
    if ok.sum() < 3:
        return {"slope": float("nan"), "points": int(ok.sum()),
                "censored_fraction": float(np.mean(censored))}
    slope, intercept = np.polyfit(ns[ok], np.log(surv[ok]), 1)
    return {"slope": float(slope), "log_K": float(intercept), "points": int(ok.sum()),
            "censored_fraction": float(np.mean(censored))}


# -- good returns, scale times and h-hat ------------------------------------------

def _return_scan(m, delta, delta0, theta, tau, theta0):
    """Vectorized per-step test of the good/scale/inf-good conditions."""
    cv = m.critical_values
    bl_delta = np.array([m.ball_length(i, delta) for i in range(len(cv))])

    def test(x, logd, A):
        D = np.exp(np.minimum(logd, 700.0))
        c0 = m.in_ball(x, delta0)
        inside = c0 >= 0
        ci = np.where(inside, c0, 0)
        ds = np.abs(m.f(x) - cv[ci])
        # smallest usable radius; |B(c; .)| increases with the radius
        rad = np.maximum(delta, ds)
        bl_rad = np.array(m.ball_length(0, rad), ndmin=1) if len(cv) == 1 else \
            np.array([m.ball_length(int(c), r) for c, r in zip(ci, rad)])
        inf_good = inside & (theta * D >= A * bl_rad)
        cd = m.in_ball(x, delta)
        good = (cd >= 0) & (theta * D >= A * bl_delta[np.where(cd >= 0, cd, 0)])
        scale = theta0 * D >= E * tau * A
        return good, scale, inf_good

    return test


def h_T_hh_batch(noise, eps, delta, delta0, theta, tau, cap, trials, seed=0, x0=None,
                 theta0=None):
    """``h_delta^theta``, ``T_tau``, ``h-hat`` and ``inf_{delta' in [delta, delta0]} h_{delta'}`` per trial.

    Each statistic is the first ``s`` in ``1..cap`` at which its event fires;
    ``cap + 1`` marks a censored value.
    """
    if not 0 < delta <= delta0:
        raise ValueError("need 0 < delta <= delta0")
    m = noise.base
    theta0 = default_theta0(m) if theta0 is None else theta0
    x0 = initial_points(seed, trials) if x0 is None else np.asarray(x0, float)
    B = x0.size
    res = {k: np.full(B, cap + 1, dtype=np.int64) for k in ("h", "T", "hinf")}
    test = _return_scan(m, delta, delta0, theta, tau, theta0)

    def obs(s, idx, x, logd, A, dist):
        if s == 0:
            return np.ones(idx.size, bool)
        good, scale, inf_good = test(x, logd, A)
        for key, flag in (("h", good), ("T", scale), ("hinf", inf_good)):
            sel = idx[flag]
            r = res[key]
            r[sel] = np.minimum(r[sel], s)
        done = (res["h"][idx] <= cap) & (res["T"][idx] <= cap) & (res["hinf"][idx] <= cap)
        return ~done

    run_batch(noise, eps, x0, cap, seed, obs)
    res["hh"] = np.minimum(res["hinf"], res["T"])
    res["censored"] = res["hh"] > cap
    return res


def h_T_hh(x, noise, eps, delta, delta0, theta, tau, cap, seed=0, trial=0, theta0=None):
    """Single-trial version of :func:`h_T_hh_batch`; ``None`` marks a capped statistic."""
    r = h_T_hh_batch(noise, eps, delta, delta0, theta, tau, cap, 1, seed, np.array([x]),
                     theta0) if trial == 0 else None
    if r is None:
        raise ValueError("use h_T_hh_batch for several trials")

    def val(key):
        v = int(r[key][0])
        return None if v > cap else v
    return {"h": val("h"), "T": val("T"), "hh": val("hh"), "hinf": val("hinf")}


def hhat_moment(noise, eps, p, trials, cap, seed=0, theta=None, tau=None, delta0=None):
    """Mean of ``h-hat_{eps,tau}^theta`` to the power ``p`` over ``B(c; eps)`` times noise.

    Starting points are uniform on the union of the balls, so the average is
    already normalized by ``|B(c; eps)|``.  Censored trials count as ``cap + 1``
    (a lower bound).
    """
    m = noise.base
    theta0 = default_theta0(m)
    theta = theta0 / 4.0 if theta is None else theta
    delta0 = m.delta_star if delta0 is None else delta0
    tau = default_tau(theta0) if tau is None else tau
    ncrit = len(m.critical_points)
    u = initial_points(seed, trials, tag=1)
    which = np.arange(trials) % ncrit
    x0 = np.empty(trials)
    for i in range(ncrit):
        lo, hi = m.critical_ball(i, eps)
        sel = which == i
        x0[sel] = lo + (hi - lo) * u[sel]
    r = h_T_hh_batch(noise, eps, eps, delta0, theta, tau, cap, trials, seed, x0, theta0)
    hh = r["hh"].astype(float)
    return {"mean": float(np.mean(hh ** p)), "p": p, "theta": theta, "tau": tau,
            "delta0": delta0, "censored_fraction": float(np.mean(r["censored"])),
            "trials": trials, "cap": cap}


# -- growth near the critical set ------------------------------------------------

def growth_diagnostic(noise, eps, trials=2000, cap=2000, seed=0):
    """Empirical growth constants for landings near the critical set.

    Part (i): starts within ``4 eps`` of a critical value, events are landings
    in ``B(c; 2 eps)`` before the first visit to ``B(eps)`` (``1 <= j < s``);
    ``Lambda-hat`` is the least ``|Dg^s(x)| D_c(eps)``.
    Part (ii): uniform starts, ``g^j(x)`` outside ``B(eps)`` for ``j < s``;
    reports the least ``|Dg^s(x)| eps^{1/ell_max - 1}``.
    """
    m = noise.base
    cv = m.critical_values
    ncrit = cv.size
    logDc = np.log([m.d_c(i, eps) for i in range(ncrit)])
    u = initial_points(seed, trials, tag=2)
    which = np.arange(trials) % ncrit
    lo = np.clip(cv[which] - 4 * eps, 0.0, 1.0)
    hi = np.clip(cv[which] + 4 * eps, 0.0, 1.0)
    x0 = lo + (hi - lo) * u
    ev_log, ev_s = [], []

    def obs_i(s, idx, x, logd, A, dist):
        if s == 0:
            return np.ones(idx.size, bool)
        c2 = m.in_ball(x, 2 * eps)
        hit = c2 >= 0
        if hit.any():
            ev_log.append(logd[hit] + logDc[c2[hit]])
            ev_s.append(np.full(hit.sum(), s))
        return m.in_ball(x, eps) < 0

    run_batch(noise, eps, x0, cap, seed, obs_i)
    out = {"epsilon": eps, "trials": trials, "cap": cap}
    if ev_log:
        vals = np.concatenate(ev_log)
        ss = np.concatenate(ev_s)
        lam = float(np.min(vals))
        resid = (vals - lam) / ss
        out.update(events=int(vals.size), Lambda_hat=math.exp(lam), log_Lambda_hat=lam,
                   residual_exponent={"min": float(np.min(resid)),
                                      "median": float(np.median(resid)),
                                      "max": float(np.max(resid))},
                   status="ok")
    else:
        out.update(events=0, Lambda_hat=None, status="no events")

    expo = 1.0 / m.ell_max - 1.0
    best = [np.inf]
    count = [0]
    x0b = initial_points(seed, trials, tag=3)

    def obs_ii(s, idx, x, logd, A, dist):
        if s >= 1:
            best[0] = min(best[0], float(np.min(logd)) + expo * math.log(eps))
            count[0] += idx.size
        return m.in_ball(x, eps) < 0

    run_batch(noise, eps, x0b, cap, seed, obs_ii, offset=trials)
    out["part_ii"] = {"events": count[0],
                      "min_scaled_deriv": math.exp(best[0]) if count[0] else None}
    return out


# -- backward contraction ----------------------------------------------------------

def backward_contraction_check(noise, eps, xi=1.0, xi_prime=2.0, trials=200, horizon=300,
                               seed=0, grid=129, max_checks=3):
    """Falsification counter for ``W meets B(xi eps), g^s(W) in B(2 eps) => W in B(xi' eps)``.

    For sampled ``x`` in ``B(xi eps)`` and each return ``g^s(x)`` into
    ``B(c; 2 eps)``, the segments from ``x`` to both ends of ``B(xi' eps)`` are
    pushed forward on a grid; a segment mapped entirely into ``B(c; 2 eps)``
    means the pull-back component reaches the boundary: a violation.
    """
    if not 0 < xi < xi_prime <= 2:
        raise ValueError("need 0 < xi < xi' <= 2")
    m = noise.base
    nz = _effective(noise, eps)
    ncrit = len(m.critical_points)
    u = initial_points(seed, trials, tag=4)
    which = np.arange(trials) % ncrit
    x0 = np.empty(trials)
    for i in range(ncrit):
        lo, hi = m.critical_ball(i, xi * eps)
        sel = which == i
        x0[sel] = lo + (hi - lo) * u[sel]
    hits = []
    counts = np.zeros(trials, dtype=int)

    def obs(s, idx, x, logd, A, dist):
        if s == 0:
            return np.ones(idx.size, bool)
        c2 = m.in_ball(x, 2 * eps)
        for i, c in zip(idx[c2 >= 0], c2[c2 >= 0]):
            hits.append((int(i), s, int(c)))
            counts[i] += 1
        return counts[idx] < max_checks

    run_batch(noise, eps, x0, horizon, seed, obs)
    violations = []
    for i, s, c in hits:
        t = (nz.param_from_uniform(trial_stream(seed, i).random(s), eps) if eps > 0
             else np.zeros(s))
        c0 = int(m.in_ball(x0[i], xi * eps))
        blo, bhi = m.critical_ball(c0, xi_prime * eps)
        for end in (blo, bhi):
            y = np.linspace(x0[i], end, grid)
            pts, _, _ = replay(nz, eps, t, y, s)
            if np.all(m.in_ball(pts[s], 2 * eps) == c):
                violations.append({"trial": i, "s": s, "x": float(x0[i]), "end": float(end)})
    return {"checks": len(hits), "violations": len(violations), "witnesses": violations[:10],
            "xi": xi, "xi_prime": xi_prime, "epsilon": eps}
