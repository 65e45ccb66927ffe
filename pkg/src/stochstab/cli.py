"""Command-line experiment runner.

Every subcommand reads an optional TOML or JSON config, writes plot-ready
CSV/JSON files to ``--out-dir`` and a ``manifest.json`` describing the run.
Results depend only on the config and the seed; timings live in the
manifest alone.

Exit codes: 0 success, 2 invalid input, 3 numeric failure, 4 falsification
events recorded.
"""

import argparse
import hashlib
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import _io
from .deterministic import (PreconditionError, analyze_map, binding_constants,
                            binding_period, verify_binding)
from .inducing import boundary_niceness_check, s_integral_estimates, tail_estimate
from .maps import DomainError, ScaleError, chebyshev, distortion_constant, map_from_dict
from .noise import NoiseModel, ValidityError, check_regularity, trial_stream
from .orbits import (backward_contraction_check, classify_return, default_tau,
                     default_theta0, initial_points, iterate, recurrence_stats,
                     growth_diagnostic, write_events)
from .stationary import (NumericError, birkhoff_measure, build_deterministic_operator,
                         build_noisy_operator, l1_distance, stability_curve,
                         stationary_density)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("stochstab")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_FALSIFIED = 0, 2, 3, 4

COMMANDS = ("analyze-map", "check-noise", "simulate", "binding", "stationary",
            "stability-curve", "diagnostics-thm21", "inducing-tail", "s-integrals")

# per-command defaults; anything else in [params] is rejected
DEFAULTS = {
    "analyze-map": {"horizon": 60, "delta": 1e-5},
    "check-noise": {"eps_list": [0.05, 0.01, 0.001], "L": None, "n_x": 100,
                    "n_lengths": 10, "n_positions": 10},
    "simulate": {"epsilon": 0.01, "n": 1000, "trials": 4, "delta": None, "theta": None,
                 "tau": None, "kappa": 1.0, "m": 10.0},
    "binding": {"epsilon": 1e-5, "delta": None, "samples": 1000},
    "stationary": {"epsilon": 0.01, "N": 2048, "tol": 1e-10, "maxiter": 10_000,
                   "birkhoff_n": 0, "bins": 256},
    "stability-curve": {"eps_list": [0.05, 0.02, 0.01, 0.005], "N": 2048, "tol": 1e-10,
                        "maxiter": 10_000},
    "diagnostics-thm21": {"eps_list": [1e-2, 3e-3, 1e-3], "trials": 2000, "cap": 2000,
                          "bc_trials": 200, "bc_horizon": 300},
    "inducing-tail": {"epsilon": 0.005, "delta": None, "delta0": 0.02, "trials": 1000,
                      "cap": 10_000, "depth": 30, "window": "definition",
                      "niceness_trials": 5, "niceness_steps": 10},
    "s-integrals": {"epsilon": 1e-3, "delta0": 0.02, "p": 1.0, "theta": None, "tau": None,
                    "levels": 2, "trials": 300, "cap": 1000},
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


# -- config ---------------------------------------------------------------------

def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config: file {path} not found")
    text = path.read_bytes()
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text.decode())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"config: cannot parse {path}: {exc}") from exc


def resolve(command, raw, seed=None):
    """Merge defaults, config and flags into a validated plain dict."""
    raw = dict(raw or {})
    unknown = set(raw) - {"seed", "map", "noise", "params", "command"}
    if unknown:
        raise ConfigError(f"config: unknown top-level field(s) {sorted(unknown)}")
    if raw.get("command", command) != command:
        raise ConfigError(f"command: config is for {raw['command']!r}, not {command!r}")
    seed = raw.get("seed") if seed is None else seed
    if seed is None:
        raise ConfigError("seed: a master seed is required (--seed or 'seed' in the config)")
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: must be a non-negative integer, got {seed!r}")
    map_spec = raw.get("map") or chebyshev().to_dict()
    noise_spec = dict(raw.get("noise") or {"kind": "additive-reflected"})
    params = dict(DEFAULTS[command])
    given = raw.get("params") or {}
    bad = set(given) - set(params)
    if bad:
        raise ConfigError(f"params: unknown field(s) {sorted(bad)} for {command}; "
                          f"allowed {sorted(params)}")
    params.update(given)
    _validate_params(command, params)
    return {"command": command, "seed": seed, "map": map_spec, "noise": noise_spec,
            "params": params}


def _positive(params, *names):
    for n in names:
        v = params.get(n)
        if v is not None and not (isinstance(v, (int, float)) and v > 0):
            raise ConfigError(f"params.{n}: must be positive, got {v!r}")


def _validate_params(command, p):
    _positive(p, "delta", "delta0", "theta", "tau", "N", "n", "trials", "cap", "samples",
              "horizon", "depth", "bins")
    if "epsilon" in p and not (isinstance(p["epsilon"], (int, float)) and p["epsilon"] >= 0):
        raise ConfigError(f"params.epsilon: must be non-negative, got {p['epsilon']!r}")
    if "eps_list" in p:
        eps = p["eps_list"]
        if not eps or any(not isinstance(e, (int, float)) or e < 0 for e in eps):
            raise ConfigError("params.eps_list: need a non-empty list of non-negative numbers")
    if command == "inducing-tail":
        d = p["delta"] if p["delta"] is not None else p["epsilon"]
        if not (0 < p["epsilon"] <= d <= p["delta0"]):
            raise ConfigError(
                "params.epsilon/delta/delta0: need 0 < epsilon <= delta <= delta0 "
                f"(standing hypothesis for inducing), got epsilon={p['epsilon']}, "
                f"delta={d}, delta0={p['delta0']}")
        if p["window"] not in ("definition", "distortion"):
            raise ConfigError("params.window: must be 'definition' or 'distortion'")
    if command == "s-integrals":
        smallest = p["delta0"] * math.exp(-p["levels"])
        if not (0 < p["epsilon"] <= smallest):
            raise ConfigError(
                "params.epsilon: need 0 < epsilon <= delta <= delta0/e for every scanned "
                f"delta; the smallest is {smallest:.4g}, epsilon={p['epsilon']}")
    if command == "binding" and not p["epsilon"] > 0:
        raise ConfigError("params.epsilon: binding needs epsilon > 0")
    if command == "stability-curve":
        e = p["eps_list"]
        if any(b > a for a, b in zip(e, e[1:])):
            raise ConfigError("params.eps_list: must be decreasing")


def build_models(cfg):
    try:
        m = map_from_dict(cfg["map"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"map: invalid map spec ({exc})") from exc
    spec = cfg["noise"]
    kind = spec.get("kind")
    if kind is None:
        raise ConfigError("noise.kind: missing")
    noise = NoiseModel(kind, m, spec.get("L"))
    return m, noise


# -- commands --------------------------------------------------------------------

class Run:
    """Collects output files and falsification events of one command."""

    def __init__(self, out_dir):
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files = []
        self.falsifications = []
        self.numeric_failures = []

    def path(self, name):
        self.files.append(name)
        return self.out / name

    def csv(self, name, header, rows):
        _io.write_csv(self.path(name), header, rows)

    def json(self, name, obj):
        _io.write_json(self.path(name), _strip_timing(obj))

    def jsonl(self, name, items):
        write_events(self.path(name), list(items))


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k != "seconds"}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def cmd_analyze_map(run, cfg, m, noise, workers):
    p = cfg["params"]
    summary, tables = analyze_map(m, p["horizon"], p["delta"])
    for i, tab in enumerate(tables):
        tab.to_csv(run.path(f"critical_orbit_{i}.csv"))
    run.json("result.json", summary)


def cmd_check_noise(run, cfg, m, noise, workers):
    p = cfg["params"]
    L = noise.L if p["L"] is None else p["L"]
    rows, detail = [], []
    for eps in p["eps_list"]:
        noise.check_epsilon(eps)
        r = check_regularity(noise.kernel(eps), L, p["n_x"], p["n_lengths"], p["n_positions"])
        w = r.get("witness") or {"x": "", "E": ["", ""]}
        rows.append((noise.kind, eps, L, r["passed"], r["worst_ratio"], w["x"],
                     w["E"][0], w["E"][1]))
        detail.append({"epsilon": eps, **r})
    run.csv("regularity.csv", ["kind", "epsilon", "L", "passed", "worst_ratio", "witness_x",
                               "witness_lo", "witness_hi"], rows)
    run.json("result.json", {"kind": noise.kind, "L": L, "checks": detail})


def cmd_simulate(run, cfg, m, noise, workers):
    p = cfg["params"]
    eps = p["epsilon"]
    noise.check_epsilon(eps)
    theta0 = default_theta0(m)
    theta = theta0 / 4.0 if p["theta"] is None else p["theta"]
    tau = default_tau(theta0) if p["tau"] is None else p["tau"]
    delta = p["delta"] if p["delta"] is not None else max(eps, 1e-12)
    x0 = initial_points(cfg["seed"], p["trials"], tag=10)
    events, stats = [], []
    for k in range(p["trials"]):
        orb = iterate(float(x0[k]), noise, eps, p["n"], seed=cfg["seed"], trial=k)
        orb.to_csv(run.path(f"orbit_{k}.csv"), eps_ball=eps)
        for s in range(1, orb.n + 1):
            for ev in classify_return(orb, s, delta, theta, tau, theta0):
                d = ev.to_dict()
                d["trial"] = k
                events.append(d)
        if eps > 0:
            st = recurrence_stats(orb, eps, p["kappa"], p["m"]).to_dict()
            stats.append({"trial": k, "x0": float(x0[k]), **st})
    run.jsonl("events.jsonl", events)
    run.json("result.json", {"trials": p["trials"], "n": p["n"], "theta": theta, "tau": tau,
                             "delta": delta, "events": len(events), "recurrence": stats})


def cmd_binding(run, cfg, m, noise, workers):
    p = cfg["params"]
    eps = p["epsilon"]
    delta = eps if p["delta"] is None else p["delta"]
    consts = binding_constants(m)
    rows, detail = [], []
    for i, v in enumerate(m.critical_values):
        rep = binding_period(m, float(v), delta, consts.theta, consts.L, consts.zeta)
        audit = verify_binding(m, noise, float(v), eps, rep.M, p["samples"],
                               rng=trial_stream(cfg["seed"], i))
        rows.append((float(v), delta, rep.N, rep.M, rep.branch, audit.product, audit.limit,
                     audit.violations["bindcrit"], audit.violations["bindder"],
                     audit.violations["bindderdis"], audit.passed))
        detail.append({"report": rep.to_dict(), "audit": audit.to_dict()})
        if not audit.passed:
            run.falsifications.append({"event": "binding violation", "v": float(v),
                                       "violations": audit.violations})
    run.csv("binding.csv", ["v", "delta", "N", "M", "branch", "AWeps", "theta1",
                            "viol_bindcrit", "viol_bindder", "viol_bindderdis", "passed"], rows)
    run.json("result.json", {"constants": consts.to_dict(), "critical_values": detail})


def cmd_stationary(run, cfg, m, noise, workers):
    p = cfg["params"]
    eps = p["epsilon"]
    noise.check_epsilon(eps)
    op = build_deterministic_operator(m, p["N"]) if eps == 0 else \
        build_noisy_operator(m, noise, eps, p["N"])
    res = stationary_density(op, p["tol"], p["maxiter"])
    res.density.to_csv(run.path("density.csv"))
    out = {"epsilon": eps, "N": p["N"], **res.to_dict()}
    if not res.converged:
        run.numeric_failures.append({"event": "not converged", "residual": res.residual})
    if p["birkhoff_n"]:
        hist = birkhoff_measure(0.5 + 1e-3, noise, eps, p["birkhoff_n"], p["bins"],
                                seed=cfg["seed"])
        coarse = res.density.mass.reshape(p["bins"], -1).sum(axis=1) \
            if p["N"] % p["bins"] == 0 else None
        hist.to_csv(run.path("birkhoff.csv"))
        out["birkhoff_l1"] = l1_distance(hist, coarse) if coarse is not None else None
    run.json("result.json", out)


def cmd_stability_curve(run, cfg, m, noise, workers):
    p = cfg["params"]
    curve = stability_curve(m, noise, p["eps_list"], p["N"], p["tol"], p["maxiter"])
    curve.to_csv(run.path("stability_curve.csv"))
    run.json("result.json", curve.to_dict())
    for row in curve.rows:
        if not row[4]:
            run.numeric_failures.append({"event": "not converged", "epsilon": row[0]})


def cmd_growth(run, cfg, m, noise, workers):
    p = cfg["params"]
    rows, detail = [], []
    for e in p["eps_list"]:
        noise.check_epsilon(e)
        d = growth_diagnostic(noise, e, p["trials"], p["cap"], cfg["seed"])
        bc = backward_contraction_check(noise, e, trials=p["bc_trials"],
                                        horizon=p["bc_horizon"], seed=cfg["seed"])
        rows.append((e, d["events"], d.get("Lambda_hat") or "", d["status"], bc["checks"],
                     bc["violations"]))
        detail.append({"diagnostic": d, "backward_contraction": bc})
        if bc["violations"]:
            run.falsifications.append({"event": "backward contraction", "epsilon": e,
                                       "witnesses": bc["witnesses"]})
    lam = [r[2] for r in rows if r[2] != ""]
    increasing = len(lam) == len(rows) and all(b > a for a, b in zip(lam, lam[1:]))
    run.csv("thm21.csv", ["epsilon", "events", "Lambda_hat", "status", "bc_checks",
                          "bc_violations"], rows)
    run.json("result.json", {"rows": detail, "strictly_increasing": increasing})


def cmd_inducing_tail(run, cfg, m, noise, workers):
    p = cfg["params"]
    eps = p["epsilon"]
    noise.check_epsilon(eps)
    te = tail_estimate(noise, eps, p["delta0"], p["trials"], p["cap"], cfg["seed"],
                       p["depth"], window=p["window"], workers=workers)
    te.to_csv(run.path("survival.csv"))
    run.jsonl("events.jsonl", [e.to_dict() for e in te.events])
    nice = boundary_niceness_check(noise, eps, p["delta0"], p["niceness_trials"],
                                   p["niceness_steps"], p["depth"], cfg["seed"])
    if te.escapes:
        run.falsifications.append({"event": "nice set escape", "count": te.escapes})
    if nice["violations"]:
        run.falsifications.append({"event": "boundary niceness", **nice})
    run.json("result.json", {"tail": te.to_dict(), "boundary_niceness": nice})


def cmd_s_integrals(run, cfg, m, noise, workers):
    p = cfg["params"]
    noise.check_epsilon(p["epsilon"])
    r = s_integral_estimates(noise, p["epsilon"], p["p"], p["theta"], p["delta0"],
                             p["levels"], p["trials"], p["cap"], cfg["seed"], p["tau"])
    rows = []
    for lv in r["levels"]:
        rows.append((lv["k"], lv["delta"], max(lv["S"]), max(lv["S_censored"]),
                     lv.get("S_hat", ""), lv.get("S_hat_censored", ""), lv.get("ratio", "")))
    run.csv("s_integrals.csv", ["k", "delta", "S_max", "S_censored", "S_hat",
                                "S_hat_censored", "ratio"], rows)
    run.json("result.json", r)


HANDLERS = {
    "analyze-map": cmd_analyze_map, "check-noise": cmd_check_noise, "simulate": cmd_simulate,
    "binding": cmd_binding, "stationary": cmd_stationary,
    "stability-curve": cmd_stability_curve, "diagnostics-thm21": cmd_growth,
    "inducing-tail": cmd_inducing_tail, "s-integrals": cmd_s_integrals,
}


# -- driver ---------------------------------------------------------------------

def _versions():
    import scipy
    import sklearn
    return {"stochstab": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "sklearn": sklearn.__version__}


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def run(command, cfg, out_dir, workers=1):
    """Execute a resolved config; returns the exit code."""
    t0 = time.perf_counter()
    out = Path(out_dir)
    manifest = {"command": command, "config": cfg,
                "config_sha256": hashlib.sha256(_io.dumps(cfg).encode()).hexdigest(),
                "seed": cfg["seed"], "workers": workers, "versions": _versions()}
    code = EXIT_OK
    r = Run(out)
    try:
        m, noise = build_models(cfg)
        manifest["derived"] = {"delta_star": m.delta_star,
                               "distortion_constant": distortion_constant(m),
                               "theta0": default_theta0(m),
                               "tau_default": default_tau(default_theta0(m)),
                               "noise_L": noise.L, "noise_max_epsilon": noise.max_epsilon()}
        HANDLERS[command](r, cfg, m, noise, workers)
        if r.numeric_failures:
            code = EXIT_NUMERIC
        elif r.falsifications:
            code = EXIT_FALSIFIED
    except (ConfigError, DomainError, ValidityError) as exc:
        log.error("invalid input: %s", exc)
        manifest["error"] = str(exc)
        code = EXIT_INVALID
    except (NumericError, ScaleError, PreconditionError, FloatingPointError) as exc:
        log.error("numeric failure: %s", exc)
        manifest["error"] = str(exc)
        code = EXIT_NUMERIC
    if r.falsifications:
        r.jsonl("falsifications.jsonl", r.falsifications)
    if r.numeric_failures:
        r.jsonl("numeric_failures.jsonl", r.numeric_failures)
    manifest["outputs"] = {name: _sha256(out / name) for name in sorted(set(r.files))}
    manifest["falsification_events"] = len(r.falsifications)
    manifest["exit_code"] = code
    manifest["wall_time_s"] = time.perf_counter() - t0
    _io.write_json(out / "manifest.json", manifest)
    return code


def build_parser():
    ap = argparse.ArgumentParser(prog="stochstab",
                                 description="Random perturbations of interval maps.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="TOML or JSON experiment config")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--out-dir", default=f"out/{name}", help="output directory")
        sp.add_argument("--workers", type=int, default=1, help="worker processes")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        if args.workers < 1:
            raise ConfigError("workers: must be at least 1")
        raw = load_config(args.config) if args.config else {}
        cfg = resolve(args.command, raw, args.seed)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    code = run(args.command, cfg, args.out_dir, args.workers)
    print(json.dumps({"command": args.command, "exit_code": code,
                      "out_dir": str(args.out_dir)}))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
