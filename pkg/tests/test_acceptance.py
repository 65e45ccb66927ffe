"""End-to-end acceptance checks.

Each test prints one ``[PASS]``/``[FAIL]`` line with its measured values and
then asserts.  Run ``pytest tests/test_acceptance.py -v -s`` to see the lines
inline; they are also echoed in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from stochstab.deterministic import (binding_period, classify_growth, critical_orbit,
                                     distortion_sum, verify_binding)
from stochstab.inducing import boundary_niceness_check, recertify, tail_estimate
from stochstab.maps import Logistic, OffsetLogistic, Tent, chebyshev
from stochstab.noise import NoiseModel, check_regularity
from stochstab.orbits import (backward_contraction_check, iterate, growth_diagnostic,
                              window_check)
from stochstab.stationary import (arcsine_masses, birkhoff_measure,
                                  build_deterministic_operator, l1_distance,
                                  stability_curve, stationary_density)

RESULTS = []
FALSIFICATIONS = {}


def report(n, title, ok, detail, seconds):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d} {title}: {detail} ({seconds:.1f}s)"
    RESULTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def cheb():
    return chebyshev()


@pytest.fixture(scope="module")
def reflected(cheb):
    return NoiseModel("additive-reflected", cheb)


def test_summability_oracle(cheb):
    t = time.perf_counter()
    tab = critical_orbit(cheb, 1.0, 20)
    verdict = classify_growth(tab).verdict
    err = abs(tab.W[-1] - 4.0 / 3.0)
    dt = time.perf_counter() - t
    report(1, "summability", err < 1e-9 and verdict == "SC1" and dt < 1,
           f"|W_20 - 4/3| = {err:.2e}, verdict {verdict}", dt)


def test_ulam_tent_exact():
    t = time.perf_counter()
    res = stationary_density(build_deterministic_operator(Tent(), 512))
    dev = float(np.max(np.abs(res.density.density - 1.0)))
    dt = time.perf_counter() - t
    report(2, "tent Ulam uniform", dev < 1e-10 and dt < 5, f"max deviation {dev:.2e}", dt)


def test_acip_arcsine(cheb):
    t = time.perf_counter()
    res = stationary_density(build_deterministic_operator(cheb, 4096))
    d = l1_distance(res.density, arcsine_masses(4096))
    dt = time.perf_counter() - t
    report(3, "Chebyshev acip", d < 0.05 and dt < 60, f"L1 to arcsine {d:.4f}", dt)


def test_strong_stability(cheb, reflected):
    t = time.perf_counter()
    eps = [0.05, 0.02, 0.01, 0.005]
    curve = stability_curve(cheb, reflected, eps, 2048)
    d = [r[1] for r in curve.rows]
    monotone = all(b <= 1.1 * a for a, b in zip(d, d[1:]))
    dt = time.perf_counter() - t
    ok = all(x > 0 for x in d) and monotone and d[-1] <= 0.5 * d[0] and dt < 300
    report(4, "strong stability", ok, "L1 " + ", ".join(f"{x:.4f}" for x in d), dt)


def test_physical_measure(cheb, reflected):
    from stochstab.stationary import build_noisy_operator
    t = time.perf_counter()
    eps, n, bins = 0.01, 10_000_000, 256
    ulam = stationary_density(build_noisy_operator(cheb, reflected, eps, bins))
    h1 = birkhoff_measure(0.3, reflected, eps, n, bins, seed=11)
    h2 = birkhoff_measure(0.3, reflected, eps, n, bins, seed=12)
    d_ulam = l1_distance(h1, ulam.density)
    d_seeds = l1_distance(h1, h2)
    dt = time.perf_counter() - t
    ok = d_ulam < 0.1 and d_seeds < 0.05 and dt < 120
    report(5, "Birkhoff vs Ulam", ok, f"L1 to Ulam {d_ulam:.4f}, between seeds {d_seeds:.4f}",
           dt)


def test_regularity_certification(cheb):
    t = time.perf_counter()
    out = {}
    # plain additive noise needs an image margin of at least eps
    for kind, base, L in (("additive-uniform", OffsetLogistic(3.2, 0.1), 1),
                          ("additive-reflected", cheb, 2)):
        nz = NoiseModel(kind, base)
        out[kind] = all(check_regularity(nz.kernel(e), L)["passed"]
                        for e in (0.05, 0.01, 0.001))
    # the parameter family needs a + eps <= 4
    par = NoiseModel("parameter-uniform", Logistic(3.9))
    neg = [check_regularity(par.kernel(e), 2) for e in (0.05, 0.01, 0.001)]
    witness_ok = all((not r["passed"]) and r["witness"]["x"] < 0.01 for r in neg)
    dt = time.perf_counter() - t
    ok = all(out.values()) and witness_ok and dt < 30
    report(6, "M_eps(L) certification", ok,
           f"uniform L=1 {out['additive-uniform']}, reflected L=2 "
           f"{out['additive-reflected']}, parameter fails at x<0.01 {witness_ok}", dt)


def test_distortion_window(cheb, reflected):
    t = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_N, worst_lr, bad = 0.0, 0.0, 0
    for trial in range(1000):
        n = int(rng.integers(1, 101))
        orb = iterate(float(rng.random()), reflected, 0.01, n, seed=7, trial=trial)
        r = window_check(orb, n, npts=102)
        worst_N = max(worst_N, r["N"])
        worst_lr = max(worst_lr, abs(r["log_ratio_min"]), abs(r["log_ratio_max"]))
        bad += not r["ok"]
    dt = time.perf_counter() - t
    report(7, "distortion window", bad == 0 and dt < 60,
           f"max N {worst_N:.3f}, max |log ratio| {worst_lr:.3f}, failures {bad}", dt)


def test_binding_verification(cheb, reflected):
    t = time.perf_counter()
    eps = 1e-5
    total, lines = 0, []
    for v in cheb.critical_values:
        M = binding_period(cheb, float(v), eps).M
        audit = verify_binding(cheb, reflected, float(v), eps, M, samples=1000,
                               rng=np.random.default_rng(5))
        nviol = sum(audit.violations.values())
        total += nviol
        lines.append(f"v={v:g} M={M} violations {nviol}")
    dt = time.perf_counter() - t
    report(8, "binding", total == 0 and dt < 60, "; ".join(lines), dt)


def test_lambda_growth(reflected):
    t = time.perf_counter()
    lams, events = [], []
    for eps in (1e-2, 3e-3, 1e-3):
        out = growth_diagnostic(reflected, eps, trials=2000, cap=2000, seed=0)
        lams.append(out["Lambda_hat"] if out["Lambda_hat"] is not None else math.nan)
        events.append(out["events"])
    inc = all(b > a for a, b in zip(lams, lams[1:]))
    dt = time.perf_counter() - t
    ok = inc and min(events) >= 1000 and dt < 300
    report(9, "Lambda-hat growth", ok,
           "Lambda " + ", ".join(f"{x:.3g}" for x in lams) + f"; events {events}", dt)


def test_inducing_tail(reflected):
    t = time.perf_counter()
    te = tail_estimate(reflected, 0.005, 0.02, trials=10_000, cap=10_000, seed=0, workers=4)
    cert = [recertify(e, reflected, 0.005, 0.02)["ok"] for e in te.events[:200]]
    dt = time.perf_counter() - t
    FALSIFICATIONS["nice-set escapes"] = te.escapes
    ok = (te.slope is not None and te.slope <= -1 and te.censored_fraction < 0.2
          and all(cert) and dt < 600)
    report(10, "inducing tail", ok,
           f"slope {te.slope:.3f} on m in {te.fit_range}, censored {te.censored_fraction:.3f}, "
           f"recertified {sum(cert)}/{len(cert)}", dt)


def test_exact_algebra(cheb):
    t = time.perf_counter()
    a3 = distortion_sum(cheb, 0.0, 3)
    worst_ball = max(abs(cheb.d_c(0, d) * cheb.ball_length(0, d) - d)
                     for d in np.geomspace(1e-8, 0.2, 50))
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        x = float(rng.random())
        n, k = (int(v) for v in rng.integers(1, 15, size=2))
        lhs = distortion_sum(cheb, x, n + k)
        y, D = x, 1.0
        for _ in range(n):
            D *= abs(cheb.df(y))
            y = cheb.f(y)
        rhs = distortion_sum(cheb, x, n) + D * distortion_sum(cheb, y, k)
        worst = max(worst, abs(lhs - rhs) / abs(lhs))
    dt = time.perf_counter() - t
    ok = a3 == 42.0 and worst_ball < 1e-14 and worst < 1e-9 and dt < 10
    report(11, "exact algebra", ok,
           f"A(0,f,3) = {a3!r}, ball identity err {worst_ball:.1e}, cocycle err {worst:.1e}",
           dt)


def test_falsification_counters(reflected):
    t = time.perf_counter()
    counts = dict(FALSIFICATIONS)
    for eps in (0.01, 0.005):
        bc = backward_contraction_check(reflected, eps, trials=200, seed=0)
        counts[f"backward contraction eps={eps}"] = bc["violations"]
    for seed in (0, 3):
        bn = boundary_niceness_check(reflected, 0.005, 0.02, trials=20, n_max=20, depth=60,
                                     seed=seed)
        counts[f"boundary niceness seed={seed}"] = bn["violations"]
    dt = time.perf_counter() - t
    report(12, "falsification counters", all(v == 0 for v in counts.values()),
           ", ".join(f"{k}: {v}" for k, v in counts.items()), dt)
