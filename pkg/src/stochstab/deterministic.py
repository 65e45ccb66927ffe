"""Growth data of the unperturbed map.

Critical-value orbits, summability classification, expansion constants away
from the critical set, preferred binding periods and their Monte Carlo audit,
and first-landing derivative statistics.  Derivatives are accumulated as
logarithms so long orbits of expanding maps never overflow.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _io
from .maps import ScaleError, distortion_constant, theta_defaults

E = math.e


def _log_abs(x):
    with np.errstate(divide="ignore"):
        return np.log(np.abs(x))


def distortion_sum(m, x, n):
    """``A(x, f, n) = sum_{i<n} |Df^i(x)| / dist(f^i(x), Crit)``.

    Vectorized over ``x``; a visit to the critical set makes the sum infinite.
    """
    x = np.array(x, dtype=float)
    logd = np.zeros_like(x)
    total = np.zeros_like(x)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        for _ in range(n):
            total = total + np.exp(logd - _log_abs(m.dist_crit(x)))
            logd = logd + _log_abs(m.df(x))
            x = m.f(x)
    return total if total.ndim else float(total)


# -- critical orbits -----------------------------------------------------------

@dataclass
class CriticalOrbitTable:
    """Orbit of a critical value with derivative and distortion partial sums.

    ``points[n] = f^n(v)``, ``log_deriv[n] = log|Df^n(v)|``,
    ``W[n] = sum_{j<=n} |Df^j(v)|^{-1}`` and ``A[n] = A(v, f, n)``.
    """

    v: float
    points: np.ndarray
    log_deriv: np.ndarray
    W: np.ndarray
    A: np.ndarray

    @property
    def N(self):
        return len(self.points) - 1

    @property
    def deriv(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_deriv)

    @classmethod
    def from_derivatives(cls, derivs, v=float("nan")):
        """Table built from a bare sequence ``|Df^n(v)|`` (``n = 0..N``)."""
        d = np.asarray(derivs, dtype=float)
        logd = _log_abs(d)
        with np.errstate(over="ignore"):
            W = np.cumsum(np.exp(-logd))
        nan = np.full(d.shape, np.nan)
        return cls(v, nan, logd, W, nan)

    def rows(self):
        d = self.deriv
        for n in range(self.N + 1):
            yield (n, self.points[n], d[n], self.log_deriv[n], self.W[n], self.A[n])

    def to_csv(self, path):
        return _io.write_csv(path, ["n", "point", "abs_deriv", "log_abs_deriv", "W", "A"],
                             self.rows())

    def to_dict(self):
        return {"v": self.v, "N": self.N, "W_N": float(self.W[-1]),
                "log_abs_deriv_N": float(self.log_deriv[-1]), "A_N": float(self.A[-1])}


def critical_orbit(m, v, N):
    """Orbit table of the critical value ``v`` up to ``f^N(v)``."""
    if N < 1:
        raise ValueError("N must be at least 1")
    cv = m.critical_values
    if cv.size == 0 or np.min(np.abs(cv - v)) > 1e-12:
        raise ValueError(f"{v} is not a critical value of {m!r}")
    pts = np.empty(N + 1)
    logd = np.empty(N + 1)
    A = np.empty(N + 1)
    x, ld, acc = float(v), 0.0, 0.0
    with np.errstate(divide="ignore", over="ignore"):
        for n in range(N + 1):
            pts[n], logd[n], A[n] = x, ld, acc
            dc = float(m.dist_crit(x))
            acc = acc + (math.exp(ld) / dc if dc > 0 and ld < 700 else math.inf)
            dfx = abs(float(m.df(x)))
            ld = ld + (math.log(dfx) if dfx > 0 else -math.inf)
            x = float(m.f(x))
        W = np.cumsum(np.exp(-logd))
    return CriticalOrbitTable(float(v), pts, logd, W, A)


@dataclass
class GrowthClassification:
    verdict: str
    S: float
    S_partial: float
    tail_bound: float
    ratio: float
    horizon: int
    warnings: list = field(default_factory=list)
    label: str = "finite-horizon evidence"

    def to_dict(self):
        return dict(self.__dict__)


def classify_growth(table, ratio_max=0.95, window=10, ld_threshold=1e3):
    """Classify a critical orbit as ``SC1``, ``LD-only``, ``neither`` or ``undetermined``.

    The terms ``|Df^n(v)|^{-1}`` are extrapolated geometrically with ratio
    ``r`` equal to the median of the last ``window`` term ratios.  ``SC1`` is
    declared when ``r < ratio_max``; ``S`` then includes the extrapolated tail.
    """
    if not isinstance(table, CriticalOrbitTable):
        table = CriticalOrbitTable.from_derivatives(table)
    if table.N + 1 < window:
        raise ValueError(f"need at least {window} rows, got {table.N + 1}")
    logd = table.log_deriv
    steps = -np.diff(logd[-(window + 1):])
    with np.errstate(over="ignore"):
        r = float(np.exp(np.median(steps)))
    W_N = float(table.W[-1])
    last_term = math.exp(-logd[-1]) if np.isfinite(logd[-1]) else math.inf
    notes = []
    if r < ratio_max and math.isfinite(W_N):
        tail = last_term * r / (1.0 - r)
        return GrowthClassification("SC1", W_N + tail, W_N, tail, r, table.N)
    recent = logd[-window:]
    if np.all(recent > math.log(ld_threshold)) and recent[-1] >= recent[0]:
        verdict = "LD-only"
    elif np.all(recent <= 0.0):
        verdict = "neither"
        if recent[-1] < recent[0] and recent[-1] < math.log(1e-3):
            notes.append("derivatives decay along the critical orbit: "
                         "likely attracted to a hyperbolic periodic orbit")
    else:
        verdict = "undetermined"
    return GrowthClassification(verdict, math.inf, W_N, math.inf, r, table.N, notes)


# -- expansion away from the critical set --------------------------------------

def _in_union(x, intervals):
    inside = np.zeros(np.shape(x), dtype=bool)
    for a, b in intervals:
        inside |= (x > a) & (x < b)
    return inside


def mane_constants(m, U, N, grid=10_000):
    """Empirical ``(C, lambda)`` with ``|Df^n(x)| >= C lambda^n`` for segments avoiding ``U``.

    ``U`` is a list of open intervals.  A grid point contributes ``(n, |Df^n|)``
    while ``x, ..., f^{n-1}(x)`` all lie outside ``U``.  ``lambda`` is the least
    ``|Df^n|^{1/n}`` with ``n >= N/2``; ``C`` the least ``|Df^n| lambda^{-n}``.
    """
    if grid < 1000:
        raise ValueError("grid must have at least 10^3 points")
    x = np.linspace(0.0, 1.0, grid)
    logd = np.zeros(grid)
    alive = np.ones(grid, dtype=bool)
    ns, lds = [], []
    half = math.ceil(N / 2)
    for n in range(1, N + 1):
        alive &= ~_in_union(x, U)
        if not alive.any():
            break
        logd = logd + _log_abs(m.df(x))
        x = m.f(x)
        ns.append(np.full(alive.sum(), n))
        lds.append(logd[alive])
    if not ns:
        raise ScaleError("no orbit segment avoids U")
    ns = np.concatenate(ns)
    lds = np.concatenate(lds)
    late = ns >= half
    if not late.any():
        raise ScaleError(f"no orbit segment of length >= {half} avoids U")
    log_lam = float(np.min(lds[late] / ns[late]))
    log_C = float(np.min(lds - ns * log_lam))
    return math.exp(log_C), math.exp(log_lam), {"segments": int(ns.size),
                                                 "n": ns, "log_deriv": lds}


# -- preferred binding period --------------------------------------------------

@dataclass
class BindingConstants:
    theta: float
    theta0: float
    theta1: float
    L: float
    zeta: float
    W0: float
    C0: float
    eta_star: float
    C: float

    def to_dict(self):
        return dict(self.__dict__)


def binding_constants(m, horizon=200):
    """Default constants: ``theta`` from ``4 theta W0 <= theta1`` and ``16 e theta W0 C0 <= eta_*``."""
    C = distortion_constant(m)
    th1 = theta_defaults(C)
    W0 = 0.0
    for v in m.critical_values:
        tab = critical_orbit(m, float(v), horizon)
        try:
            cls = classify_growth(tab)
            W = cls.S if cls.verdict == "SC1" else float(tab.W[-1])
        except ValueError:
            W = float(tab.W[-1])
        W0 = max(W0, W)
    C0 = float(np.max(np.abs(m.df(np.linspace(0, 1, 4001)))))
    locs = m.crit_locations
    eta = 0.99 * float(np.min(np.diff(locs))) if locs.size > 1 else 0.99
    theta = min(th1 / (4.0 * W0), eta / (16.0 * E * W0 * C0))
    ell = m.ell_max
    return BindingConstants(theta, th1, th1, 2.0 ** ell + 1.0, 1.0 / (2.0 * ell),
                            W0, C0, eta, C)


@dataclass
class BindingReport:
    v: float
    delta: float
    M: int
    N: int
    A_M: float
    A_next: float
    delta_prime: float
    deriv_next: float
    branch: str
    k: int
    s: list
    out_holds: bool
    in_holds: list
    smalla: bool
    noretmv: bool
    dermv: bool
    theta: float
    L: float
    zeta: float
    constants: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(self.__dict__)


def _orbit_until(m, v, limit, max_len=100_000):
    """Critical orbit long enough that ``A`` exceeds ``limit``."""
    n = 64
    while True:
        tab = critical_orbit(m, v, n)
        if tab.A[-1] > limit:
            return tab
        if n >= max_len:
            raise ScaleError(f"A(v, f, n) stays below {limit:g} up to n = {n}")
        n *= 4


def binding_period(m, v, delta, theta=None, L=None, zeta=None):
    """Preferred binding period ``M_v(delta)`` chosen by the deep/out/in case analysis."""
    consts = None
    if theta is None or L is None or zeta is None:
        consts = binding_constants(m)
        theta = consts.theta if theta is None else theta
        L = consts.L if L is None else L
        zeta = consts.zeta if zeta is None else zeta
    if not (delta > 0 and theta > 0):
        raise ValueError("delta and theta must be positive")
    ell = m.ell_max
    if not L > 2.0 ** ell:
        raise ValueError(f"L must exceed 2^ell_max = {2.0 ** ell:g}")
    if not 0 < zeta < 1.0 / ell:
        raise ValueError(f"zeta must lie in (0, {1.0 / ell:g})")
    limit = theta / delta
    tab = _orbit_until(m, float(v), limit)
    N = int(np.nonzero(tab.A <= limit)[0][-1])
    if N < 1:
        raise ScaleError(f"A(v, f, 1) > theta/delta; delta = {delta:g} is too large")
    pts = tab.points
    terms = np.exp(tab.log_deriv) / m.dist_crit(pts)

    try:
        deep_idx = m.in_ball(pts[:N + 1], L * delta)
    except ScaleError as exc:
        raise ScaleError(f"delta = {delta:g} not small enough: {exc}") from None
    hits = np.nonzero(deep_idx[:N] >= 0)[0]
    if hits.size:
        raise ScaleError(f"delta = {delta:g} not small enough: f^{int(hits[0])}(v) "
                         f"enters B(L delta) before N = {N}")

    s_list, in_list, out_holds, k_sel = [], [], False, -1
    if deep_idx[N] >= 0:
        M, branch = N, "deep"
    else:
        ds = m.delta_star
        k = 0
        while True:
            idx = np.nonzero(m.in_ball(pts[:N + 1], 2.0 ** -k * ds) >= 0)[0]
            if idx.size == 0:
                break
            s_list.append(int(idx[-1]))
            k += 1
        k1 = k
        s_full = s_list + [-1]
        s0 = s_full[0]
        out_holds = bool(terms[s0 + 1:N + 1].sum() >= theta / (2.0 * delta))
        for k in range(k1):
            dk = 2.0 ** -k * ds
            lhs = terms[s_full[k + 1] + 1:s_full[k] + 1].sum()
            in_list.append(bool(lhs >= (delta / dk) ** (zeta / 2.0) / delta))
        M, branch = N, "none"
        if out_holds:
            branch = "out"
        else:
            for k, ok in enumerate(in_list):
                if ok and s_full[k] >= 1:
                    M, branch, k_sel = s_full[k], "in", k
                    break
    if M >= len(pts) - 1:
        tab = critical_orbit(m, float(v), M + 2)
    d_next = float(np.exp(tab.log_deriv[M + 1]))
    dprime = max(float(m.dist_star(tab.points[M])), delta)
    report = BindingReport(
        v=float(v), delta=float(delta), M=int(M), N=N, A_M=float(tab.A[M]),
        A_next=float(tab.A[M + 1]), delta_prime=dprime, deriv_next=d_next,
        branch=branch, k=k_sel, s=s_list, out_holds=out_holds, in_holds=in_list,
        smalla=bool(tab.A[M] <= limit), noretmv=True,
        dermv=bool(d_next >= (dprime / delta) ** (1.0 - zeta)),
        theta=float(theta), L=float(L), zeta=float(zeta),
        constants=consts.to_dict() if consts else {})
    return report


def lambda0(m, delta, **kw):
    """``Lambda_0(delta) = min_v |Df^{M_v(delta)+1}(v)|``."""
    return min(binding_period(m, float(v), delta, **kw).deriv_next
               for v in m.critical_values)


# -- Monte Carlo audit of a binding period -------------------------------------

@dataclass
class BindingAudit:
    passed: bool
    samples: int
    M: int
    W: float
    A_M: float
    product: float
    limit: float
    violations: dict
    worst_margin: dict

    def to_dict(self):
        return dict(self.__dict__)


class PreconditionError(ValueError):
    """A precondition of a binding-period estimate fails numerically."""


def verify_binding(m, noise, v, eps, M, samples=1000, rng=None, theta1=None):
    """Audit that ``M`` is an ``eW``-binding period for ``(v, eps)``.

    Draws ``y`` uniform in ``[v - eps, v + eps]`` (clipped to [0, 1]) and
    ``M`` maps from ``noise``; margins are relative and a negative margin is a
    violation.
    """
    if theta1 is None:
        theta1 = theta_defaults(distortion_constant(m))
    tab = critical_orbit(m, float(v), M + 1)
    W = float(tab.W[M])
    A_M = float(tab.A[M])
    prod = A_M * W * eps
    if eps > 0 and prod > theta1:
        raise PreconditionError(
            f"A(v,f,M) * W * eps = {prod:.4g} exceeds theta1 = {theta1:.4g}")
    if eps == 0 or noise is None:
        samples_eff = 1
        y = np.array([float(v)])
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        samples_eff = samples
        y = np.clip(v + eps * (2.0 * rng.random(samples) - 1.0), 0.0, 1.0)
    fpts = tab.points
    fD = tab.log_deriv
    logDg = np.zeros_like(y)
    margins = {"bindcrit": np.inf, "bindder": np.inf, "bindderdis": np.inf}
    counts = {k: 0 for k in margins}
    x = y
    for j in range(M):
        dcj = float(m.dist_crit(fpts[j]))
        mc = 1.0 - 2.0 * np.abs(x - fpts[j]) / dcj
        if noise is None or eps == 0:
            t = 0.0
            gx, dgx = m.f(x), m.df(x)
        else:
            t = noise.draw(rng, eps, x.shape)
            gx, dgx, _ = noise.apply_with_derivs(x, t)
        logDg = logDg + _log_abs(dgx)
        md = 1.0 - np.abs(logDg - fD[j + 1])
        scale = E * W * eps * math.exp(fD[j + 1])
        diff = np.abs(gx - fpts[j + 1])
        mdis = 1.0 - diff / scale if scale > 0 else np.where(diff == 0, 1.0, -np.inf)
        for key, arr in (("bindcrit", mc), ("bindder", md), ("bindderdis", mdis)):
            margins[key] = min(margins[key], float(np.min(arr)))
            counts[key] += int(np.sum(arr < -1e-12))
        x = gx
    return BindingAudit(passed=all(c == 0 for c in counts.values()), samples=samples_eff,
                        M=int(M), W=W, A_M=A_M, product=prod, limit=theta1,
                        violations=counts, worst_margin=margins)


# -- first landing statistics --------------------------------------------------

def landing_events(m, delta, samples, horizon, rng=None):
    """Orbit segments in ``L_c(delta)``: ``f^j(x)`` outside ``B(delta)`` for ``j < n``, ``f^n(x)`` in ``B(c; 2 delta)``.

    Returns arrays ``(x0, n, c_index, log|Df^n(x0)|, A(x0, f, n))`` over all
    events with ``1 <= n <= horizon``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    x0 = rng.random(samples)
    x = x0.copy()
    logd = np.zeros(samples)
    A = np.zeros(samples)
    alive = np.ones(samples, dtype=bool)
    ev = {"x0": [], "n": [], "c": [], "log_deriv": [], "A": []}
    with np.errstate(divide="ignore", over="ignore"):
        for n in range(1, horizon + 1):
            alive &= m.in_ball(x, delta) < 0
            if not alive.any():
                break
            A = A + np.exp(logd - _log_abs(m.dist_crit(x)))
            logd = logd + _log_abs(m.df(x))
            x = m.f(x)
            c = m.in_ball(x, 2.0 * delta)
            hit = alive & (c >= 0)
            if hit.any():
                ev["x0"].append(x0[hit])
                ev["n"].append(np.full(hit.sum(), n))
                ev["c"].append(c[hit])
                ev["log_deriv"].append(logd[hit])
                ev["A"].append(A[hit])
    return {k: (np.concatenate(v) if v else np.array([])) for k, v in ev.items()}


def landing_derivative_check(m, delta, samples=10_000, horizon=200, rng=None):
    """Empirical ``kappa_0``: least ``|Df^n(x)| D_c(delta) (delta''/delta)^{1 - 1/ell_max}``."""
    if not 0 < delta < m.delta_star:
        raise ScaleError(f"delta must lie in (0, delta_* = {m.delta_star:g})")
    ev = landing_events(m, delta, samples, horizon, rng)
    if ev["n"].size == 0:
        return {"events": 0, "kappa0": None, "status": "no events"}
    dc = np.array([m.d_c(int(c), delta) for c in ev["c"]])
    dpp = np.maximum(m.dist_cv(ev["x0"]), delta)
    expo = 1.0 - 1.0 / m.ell_max
    vals = np.exp(ev["log_deriv"]) * dc * (dpp / delta) ** expo
    return {"events": int(vals.size), "kappa0": float(np.min(vals)), "status": "ok",
            "delta": delta}


def total_distortion_theta(m, delta, samples=10_000, horizon=200, rng=None):
    """Empirical ``theta(delta)``: largest ``A(x, f, s) |B(c; delta)| / |Df^s(x)|``."""
    if not 0 < delta < m.delta_star:
        raise ScaleError(f"delta must lie in (0, delta_* = {m.delta_star:g})")
    ev = landing_events(m, delta, samples, horizon, rng)
    if ev["n"].size == 0:
        return {"events": 0, "theta": None, "status": "no events"}
    bl = np.array([m.ball_length(int(c), delta) for c in ev["c"]])
    vals = ev["A"] * bl / np.exp(ev["log_deriv"])
    return {"events": int(vals.size), "theta": float(np.max(vals)), "status": "ok",
            "delta": delta}


def analyze_map(m, horizon=60, delta=None):
    """Summary used by the ``analyze-map`` command: tables, classification, binding data."""
    out = {"map": m.to_dict(), "delta_star": m.delta_star, "critical_values": []}
    consts = binding_constants(m)
    out["constants"] = consts.to_dict()
    tables = []
    for v in m.critical_values:
        tab = critical_orbit(m, float(v), horizon)
        tables.append(tab)
        entry = {"v": float(v), "table": tab.to_dict()}
        try:
            entry["classification"] = classify_growth(tab).to_dict()
        except ValueError as exc:
            entry["classification"] = {"verdict": "undetermined", "reason": str(exc)}
        if delta is not None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                entry["binding"] = binding_period(
                    m, float(v), delta, consts.theta, consts.L, consts.zeta).to_dict()
        out["critical_values"].append(entry)
    return out, tables
