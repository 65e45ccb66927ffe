import json

import pytest

from stochstab import cli


def _run(tmp_path, argv, name="out"):
    out = tmp_path / name
    code = cli.main(argv + ["--out-dir", str(out)])
    return code, out


def test_seed_is_mandatory(tmp_path, capsys):
    code, _ = _run(tmp_path, ["analyze-map"])
    assert code == 2
    assert "seed" in capsys.readouterr().err


def test_inducing_constraint_named(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1, "params": {"epsilon": 0.05, "delta0": 0.02}}))
    code, _ = _run(tmp_path, ["inducing-tail", "--config", str(cfg)])
    assert code == 2
    err = capsys.readouterr().err
    assert "epsilon <= delta <= delta0" in err and "standing hypothesis" in err


def test_unknown_param_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text("seed = 1\n[params]\nfoo = 3\n")
    code, _ = _run(tmp_path, ["stationary", "--config", str(cfg)])
    assert code == 2 and "foo" in capsys.readouterr().err


def test_invalid_noise_size_is_validation_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"seed": 1, "noise": {"kind": "additive-uniform"},
                               "params": {"epsilon": 0.01, "N": 64}}))
    code, out = _run(tmp_path, ["stationary", "--config", str(cfg)])
    assert code == 2
    assert "error" in json.loads((out / "manifest.json").read_text())


def test_stability_curve_rows_and_determinism(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("seed = 4\n[params]\neps_list = [0.05, 0.02]\nN = 128\n")
    c1, o1 = _run(tmp_path, ["stability-curve", "--config", str(cfg)], "a")
    c2, o2 = _run(tmp_path, ["stability-curve", "--config", str(cfg)], "b")
    assert c1 == c2 == 0
    rows = (o1 / "stability_curve.csv").read_text().splitlines()
    assert len(rows) == 3
    assert (o1 / "stability_curve.csv").read_bytes() == (o2 / "stability_curve.csv").read_bytes()


def test_simulate_csv_byte_identical(tmp_path):
    a = _run(tmp_path, ["simulate", "--seed", "9"], "a")[1]
    b = _run(tmp_path, ["simulate", "--seed", "9"], "b")[1]
    c = _run(tmp_path, ["simulate", "--seed", "10"], "c")[1]
    for f in sorted(p.name for p in a.glob("*.csv")):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    assert (a / "orbit_0.csv").read_bytes() != (c / "orbit_0.csv").read_bytes()


def test_manifest_contents(tmp_path):
    code, out = _run(tmp_path, ["analyze-map", "--seed", "2"])
    man = json.loads((out / "manifest.json").read_text())
    assert code == 0 and man["exit_code"] == 0
    assert man["seed"] == 2 and len(man["config_sha256"]) == 64
    assert man["derived"]["theta0"] == pytest.approx(0.04598, abs=5e-6)
    assert set(man["outputs"]) >= {"result.json"}
    assert "numpy" in man["versions"]


def test_numeric_failure_exit(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("seed = 1\n[params]\nN = 256\nmaxiter = 1\ntol = 1e-14\n")
    code, out = _run(tmp_path, ["stationary", "--config", str(cfg)])
    assert code == 3 and (out / "numeric_failures.jsonl").exists()


def test_falsification_exit(tmp_path, monkeypatch):
    def fake(run, cfg, m, noise, workers):
        run.falsifications.append({"event": "synthetic"})
    monkeypatch.setitem(cli.HANDLERS, "analyze-map", fake)
    code, out = _run(tmp_path, ["analyze-map", "--seed", "1"])
    assert code == 4
    assert json.loads((out / "falsifications.jsonl").read_text())["event"] == "synthetic"


def test_inducing_tail_small_run(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("seed = 3\n[params]\ntrials = 20\ncap = 500\n")
    code, out = _run(tmp_path, ["inducing-tail", "--config", str(cfg), "--workers", "2"])
    assert code == 0
    assert (out / "survival.csv").exists() and (out / "events.jsonl").exists()
