"""Ulam discretization of the transfer operator and stationary densities.

The deterministic operator is built branch by branch: bin edges are merged
with their preimages on each monotone lap, so every piece maps into a single
bin and ``P_ij = |I_i ∩ f^{-1}(I_j)| / |I_i|`` is exact up to root finding.
The noisy operator integrates the closed-form kernel CDF over each source bin
with Gauss-Legendre quadrature.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _io
from .maps import MapModel
from .noise import NoiseModel, trial_stream


class NumericError(RuntimeError):
    """A numerical check (quadrature defect, convergence) failed."""


@dataclass
class DensityVector:
    """Bin masses on a uniform partition of [0, 1]."""

    mass: np.ndarray

    def __post_init__(self):
        self.mass = np.asarray(self.mass, dtype=float)
        if np.any(self.mass < -1e-15):
            raise ValueError("negative bin mass")
        total = self.mass.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"total mass {total!r} differs from 1")

    @property
    def N(self):
        return self.mass.size

    @property
    def edges(self):
        return np.linspace(0.0, 1.0, self.N + 1)

    @property
    def density(self):
        return self.mass * self.N

    def rows(self):
        e = self.edges
        d = self.density
        for i in range(self.N):
            yield (e[i], e[i + 1], self.mass[i], d[i])

    def to_csv(self, path):
        return _io.write_csv(path, ["bin_left", "bin_right", "mass", "density"], self.rows())


def normalize(mass):
    mass = np.clip(np.asarray(mass, dtype=float), 0.0, None)
    return DensityVector(mass / mass.sum())


@dataclass
class UlamOperator:
    """Row-stochastic sparse matrix ``P`` on ``N`` equal bins."""

    P: sp.csr_matrix
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        P = sp.csr_matrix(self.P)
        if P.shape[0] != P.shape[1]:
            raise ValueError("operator must be square")
        if P.nnz and P.data.min() < 0:
            raise ValueError("negative transition mass")
        rows = np.asarray(P.sum(axis=1)).ravel()
        if np.max(np.abs(rows - 1.0)) > 1e-12:
            raise ValueError("rows do not sum to 1")
        self.P = P
        self._PT = P.T.tocsr()

    @property
    def N(self):
        return self.P.shape[0]

    def push(self, mass):
        """One step of the discretized transfer operator on bin masses."""
        return self._PT @ mass

    def dense(self):
        return self.P.toarray()

    def to_coo_text(self, path):
        coo = self.P.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return _io.write_csv(path, ["i", "j", "p"],
                             zip(coo.row[order], coo.col[order], coo.data[order]))


def _row_normalize(P):
    P = sp.csr_matrix(P)
    rows = np.asarray(P.sum(axis=1)).ravel()
    P = sp.diags(1.0 / rows) @ P
    return sp.csr_matrix(P), rows


def build_deterministic_operator(m, N):
    """Exact Ulam matrix of ``m`` on ``N`` bins."""
    if N < 2:
        raise ValueError("N must be at least 2")
    edges = np.linspace(0.0, 1.0, N + 1)
    laps = m.lap_bounds
    rows, cols, vals = [], [], []
    for k in range(len(laps) - 1):
        a, b = laps[k], laps[k + 1]
        ya, yb = m.f(a), m.f(b)
        lo, hi = min(ya, yb), max(ya, yb)
        targets = edges[(edges > lo) & (edges < hi)]
        pre = np.asarray(m.lap_inverse(k, targets), dtype=float) if targets.size else np.array([])
        own = edges[(edges > a) & (edges < b)]
        cuts = np.unique(np.concatenate([[a, b], own, pre]))
        cuts = cuts[(cuts >= a) & (cuts <= b)]
        left, right = cuts[:-1], cuts[1:]
        keep = right > left
        left, right = left[keep], right[keep]
        mid = 0.5 * (left + right)
        i = np.minimum((mid * N).astype(np.int64), N - 1)
        j = np.minimum((np.clip(m.f(mid), 0.0, 1.0) * N).astype(np.int64), N - 1)
        rows.append(i)
        cols.append(j)
        vals.append((right - left) * N)
    P = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N)).tocsr()
    P.sum_duplicates()
    P, sums = _row_normalize(P)
    return UlamOperator(P, {"map": m.to_dict(), "N": N, "epsilon": 0.0,
                            "row_defect": float(np.max(np.abs(sums - 1.0)))})


def build_noisy_operator(m, noise, eps, N, order=8, chunk=None, defect_tol=1e-10):
    """Ulam matrix of the averaged operator: ``P_ij = |I_i|^{-1} int_{I_i} p_eps(I_j | x) dx``."""
    if eps == 0:
        return build_deterministic_operator(m, N)
    if order < 8:
        raise ValueError("quadrature order must be at least 8")
    kernel = noise.kernel(eps)
    edges = np.linspace(0.0, 1.0, N + 1)
    nodes, weights = np.polynomial.legendre.leggauss(order)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    chunk = chunk or max(1, 2_000_000 // (order * (N + 1)))
    rows, cols, vals = [], [], []
    worst = 0.0
    for start in range(0, N, chunk):
        stop = min(N, start + chunk)
        xs = (edges[start:stop, None] + nodes[None, :] / N)          # (r, q)
        G = kernel.cdf(edges[None, None, 1:], xs[..., None])          # P(g <= right edge)
        Gs = kernel.cdf(edges[None, None, :-1], xs[..., None], strict=True)
        p = G - Gs
        row = np.tensordot(p, weights, axes=([1], [0]))               # (r, N)
        sums = row.sum(axis=1)
        bad = np.abs(sums - 1.0)
        if bad.max() > defect_tol:
            i = int(start + np.argmax(bad))
            raise NumericError(f"row {i} mass defect {bad.max():.3g} exceeds {defect_tol:g}")
        worst = max(worst, float(bad.max()))
        row = row / sums[:, None]
        r, c = np.nonzero(row > 0)
        rows.append(r + start)
        cols.append(c)
        vals.append(row[r, c])
    P = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N)).tocsr()
    P, _ = _row_normalize(P)
    return UlamOperator(P, {"map": m.to_dict(), "noise": noise.to_dict(), "N": N,
                            "epsilon": eps, "quadrature_order": order,
                            "row_defect": worst})


@dataclass
class StationaryResult:
    density: DensityVector
    residual: float
    iterations: int
    converged: bool
    method: str
    unique: bool
    second_start_l1: float

    def to_dict(self):
        return {k: v for k, v in self.__dict__.items() if k != "density"}


def _iterate(op, d0, tol, maxiter, check_every):
    d = d0.copy()
    ces = d0.copy()
    res_d = res_c = np.inf
    for n in range(1, maxiter + 1):
        d = op.push(d)
        ces += (d - ces) / (n + 1)
        if n % check_every == 0 or n == maxiter:
            res_d = float(np.abs(op.push(d) - d).sum())
            if res_d <= tol:
                return d, res_d, n, "power"
            res_c = float(np.abs(op.push(ces) - ces).sum())
            if res_c <= tol:
                return ces, res_c, n, "cesaro"
    if res_c < res_d:
        return ces, res_c, maxiter, "cesaro"
    return d, res_d, maxiter, "power"


def stationary_density(op, tol=1e-10, maxiter=10_000, check_every=10, check_unique=True):
    """Fixed point of ``P^T`` from the uniform start.

    Tracks the plain power iterate and its Cesàro average; whichever first
    meets ``tol`` in L1 residual is returned.  A second start (a ramp) tests
    uniqueness.
    """
    N = op.N
    u = np.full(N, 1.0 / N)
    res0 = float(np.abs(op.push(u) - u).sum())
    if res0 <= tol:
        d, res, it, how = u, res0, 0, "start"
    else:
        d, res, it, how = _iterate(op, u, tol, maxiter, check_every)
    unique, gap = True, 0.0
    if check_unique:
        ramp = np.arange(1, N + 1, dtype=float)
        ramp /= ramp.sum()
        d2, res2, _, _ = _iterate(op, ramp, tol, maxiter, check_every) \
            if float(np.abs(op.push(ramp) - ramp).sum()) > tol else (ramp, 0.0, 0, "start")
        gap = float(np.abs(d / d.sum() - d2 / d2.sum()).sum())
        unique = gap <= max(1e-6, 1e3 * tol)
    return StationaryResult(normalize(d), res, it, res <= tol, how, unique, gap)


def l1_distance(d1, d2):
    """Sum of absolute bin-mass differences."""
    a = d1.mass if isinstance(d1, DensityVector) else np.asarray(d1, float)
    b = d2.mass if isinstance(d2, DensityVector) else np.asarray(d2, float)
    if a.shape != b.shape:
        raise ValueError(f"bin counts differ: {a.size} vs {b.size}")
    return float(np.abs(a - b).sum())


def arcsine_masses(N):
    """Bin masses of the density ``1 / (pi sqrt(x (1 - x)))``."""
    e = np.linspace(0.0, 1.0, N + 1)
    cdf = (2.0 / math.pi) * np.arcsin(np.sqrt(e))
    return np.diff(cdf)


@dataclass
class StabilityCurve:
    rows: list
    baseline: StationaryResult

    def to_csv(self, path):
        return _io.write_csv(path, ["epsilon", "l1_distance", "residual", "iterations",
                                    "converged", "method"], self.rows)

    def to_dict(self):
        return {"rows": [dict(zip(["epsilon", "l1_distance", "residual", "iterations",
                                   "converged", "method"], r)) for r in self.rows],
                "baseline": self.baseline.to_dict()}


def stability_curve(m, noise, eps_list, N, tol=1e-10, maxiter=10_000):
    """``L1(mu_eps, mu)`` with ``mu`` the deterministic Ulam density at the same ``N``."""
    eps_list = list(eps_list)
    if any(b > a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("epsilon list must be decreasing")
    for e in eps_list:
        noise.check_epsilon(e)
    base = stationary_density(build_deterministic_operator(m, N), tol, maxiter,
                              check_unique=False)
    rows = []
    for e in eps_list:
        if e == 0:
            res = base
        else:
            res = stationary_density(build_noisy_operator(m, noise, e, N), tol, maxiter,
                                     check_unique=False)
        rows.append((e, l1_distance(res.density, base.density), res.residual,
                     res.iterations, res.converged, res.method))
    return StabilityCurve(rows, base)


# -- Birkhoff averages -------------------------------------------------------------

def birkhoff_measure(x0, noise, eps, n, bins, rng=None, seed=0, trial=0, chunk=1_000_000):
    """Normalized visit histogram of ``x_0, ..., x_{n-1}`` along one random orbit."""
    if n < bins:
        raise ValueError("n must be at least the number of bins")
    noise.check_epsilon(eps)
    rng = rng if rng is not None else trial_stream(seed, trial)
    step = _scalar_step(noise)
    counts = np.zeros(bins, dtype=np.int64)
    x = float(x0)
    done = 0
    buf = np.empty(min(chunk, n))
    while done < n:
        k = min(chunk, n - done)
        t = (noise.param_from_uniform(rng.random(k), eps) if eps > 0 else np.zeros(k)).tolist()
        out = buf[:k]
        for j in range(k):
            out[j] = x
            x = step(x, t[j])
        counts += np.bincount(np.minimum((out * bins).astype(np.int64), bins - 1),
                              minlength=bins)
        done += k
    return DensityVector(counts / n)


def _scalar_step(noise):
    """Plain-float step ``x -> g_t(x)`` avoiding numpy dispatch in the hot loop."""
    f = noise.base.f
    kind = noise.kind
    if kind == "additive-reflected":
        def step(x, t):
            y = (f(x) + t) % 2.0
            return 2.0 - y if y > 1.0 else y
    elif kind == "additive-uniform":
        def step(x, t):
            return min(1.0, max(0.0, f(x) + t))
    else:
        def step(x, t):
            return min(1.0, max(0.0, f(x) + t * x * (1.0 - x)))
    return step


# -- pushforward densities -----------------------------------------------------------

def branch_pushforward(maps, J, n=None, grid=1001):
    """Density of ``(g^n)_*(Leb|J)`` sampled at the images of a grid in ``J``.

    ``maps`` is a sequence of objects with ``f`` and ``df``.  Returns
    ``(z, L, L_hat)`` with ``z`` the image points (sorted), ``L = 1/|Dg^n|``
    there and ``L_hat = L / |J|``.
    """
    lo, hi = J
    if not hi > lo:
        raise ValueError("J must have positive length")
    n = len(maps) if n is None else n
    y = np.linspace(lo, hi, grid)
    x = y.copy()
    d = np.ones_like(y)
    for g in maps[:n]:
        d = d * g.df(x)
        x = g.f(x)
    s = np.sign(d)
    if not (np.all(s > 0) or np.all(s < 0)):
        raise ValueError("g^n is not monotone on J")
    order = np.argsort(x)
    L = 1.0 / np.abs(d[order])
    return x[order], L, L / (hi - lo)


def pushforward_mass(z, L):
    """Trapezoid integral of a sampled pushforward density."""
    integrate = getattr(np, "trapezoid", None) or np.trapz
    return float(integrate(L, z))
