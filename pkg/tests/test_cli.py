"""End-to-end tests of the command-line harness.

Most cases drive cli.main in process for speed; one subprocess case
covers the module entry point.  Runs use tiny scenario counts; the
numerical content of the commands is covered by the library tests.
"""

import csv
import hashlib
import json
import math
import os
import subprocess
import sys

import pytest

from ergodicmm.cli import _config_snapshot, _load_config, main, serialize_config
from ergodicmm.errors import ConfigError


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_config_roundtrip(tmp_path):
    cfg = _load_config(None, ["model.kappa=12", "estimator.mode=ewma", "experiment.scenarios=7"])
    text = serialize_config(cfg)
    p = tmp_path / "cfg.txt"
    p.write_text(text, encoding="utf-8")
    again = _load_config(str(p), None)
    assert again == cfg
    assert serialize_config(again) == text


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("# comment line\nmodel.kappa = 15\n\nexperiment.horizon = 250\n", encoding="utf-8")
    cfg = _load_config(str(p), ["model.kappa=20"])
    assert cfg["model"]["kappa"] == "20"
    assert cfg["experiment"]["horizon"] == "250"
    with pytest.raises(ConfigError, match="unknown config key model.bogus"):
        _load_config(str(p), ["model.bogus=1"])
    with pytest.raises(ConfigError, match="unknown config key nosuch.kappa"):
        _load_config(str(p), ["nosuch.kappa=1"])
    with pytest.raises(ConfigError):
        _load_config(str(p), ["model.kappa"])
    bad = tmp_path / "bad.txt"
    bad.write_text("model.kappa 15\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        _load_config(str(bad), None)


def test_snapshot_is_flat():
    cfg = _load_config(None, ["model.kappa=12"])
    snap = _config_snapshot(cfg)
    assert snap["model.kappa"] == "12"
    assert all("." in k for k in snap)


def test_solve_default_instance(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["solve", "--seed", "1", "--out", str(out)]) == 0
    screen = capsys.readouterr().out
    assert "gamma = 0.02930885109" in screen
    assert "lambda_max = 0.2930885109" in screen
    header, rows = read_csv(out / "solution.csv")
    assert header == ["q", "v_hat", "psi_plus", "psi_minus", "pi"]
    assert len(rows) == 61
    assert rows[0][0] == "30" and rows[-1][0] == "-30"
    # the forbidden side quotes inf at each bound
    assert rows[0][3] == "inf"
    assert rows[-1][2] == "inf"
    pi = [float(r[4]) for r in rows]
    assert abs(sum(pi) - 1.0) < 1e-9


def test_solve_three_state_quotes(tmp_path):
    out = tmp_path / "run"
    args = ["solve", "--seed", "1", "--out", str(out)]
    for kv in ("model.q_max=1", "model.q_min=-1", "model.phi=0",
               "model.lambda_plus=1", "model.lambda_minus=1"):
        args += ["--set", kv]
    assert main(args) == 0
    _, rows = read_csv(out / "solution.csv")
    psi_plus = [float(r[2]) for r in rows]
    assert psi_plus[0] == 0.065342640972002736
    assert psi_plus[1] == 0.13465735902799728
    assert math.isinf(psi_plus[2])


def test_simulate_learning_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    code = main([
        "simulate", "--seed", "9", "--out", str(out),
        "--set", "experiment.horizon=60",
    ])
    assert code == 0
    screen = capsys.readouterr().out
    events = int(screen.split("events = ")[1].splitlines()[0])
    header, rows = read_csv(out / "trajectory.csv")
    assert header == ["time", "side", "depth", "filled", "inventory",
                      "reward_integral", "kappa_hat"]
    assert len(rows) == events
    times = [float(r[0]) for r in rows]
    assert times == sorted(times)
    assert set(r[1] for r in rows) <= {"buy_mo", "sell_mo"}
    assert set(r[3] for r in rows) <= {"0", "1"}
    khat = [float(r[6]) for r in rows]
    assert all(1.0 <= k <= 100.0 for k in khat)
    _, trace = read_csv(out / "estimator_trace.csv")
    assert len(trace) == events
    assert [float(r[2]) for r in trace] == khat


def test_simulate_static_policy_has_no_trace(tmp_path):
    out = tmp_path / "run"
    code = main([
        "simulate", "--seed", "9", "--out", str(out), "--policy", "ergodic",
        "--set", "experiment.horizon=30",
    ])
    assert code == 0
    assert not (out / "estimator_trace.csv").exists()
    _, rows = read_csv(out / "trajectory.csv")
    assert rows[0][6] == ""


def test_exit_code_2_on_config_errors(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["solve", "--out", str(out), "--set", "model.bogus=1"]) == 2
    assert "unknown config key model.bogus" in capsys.readouterr().err
    assert main(["solve", "--out", str(out), "--set", "model.kappa=-4"]) == 2
    capsys.readouterr()
    assert main(["solve", "--out", str(out), "--seed", "-1"]) == 2
    assert main(["solve", "--out", str(out), "--seed", str(2**64)]) == 2
    assert main(["solve", "--out", str(out), "--threads", "0"]) == 2
    assert main(["simulate", "--out", str(out), "--policy", "warp"]) == 2
    capsys.readouterr()
    # failed runs leave no partial outputs behind
    assert not (out / "solution.csv").exists()


def test_exit_code_3_on_numerical_failure(tmp_path, capsys):
    out = tmp_path / "run"
    code = main([
        "experiment", "mle-consistency", "--seed", "3", "--out", str(out),
        "--set", "estimator.max_iterations=1",
        "--set", "estimator.root_tolerance=1e-14",
        "--set", "experiment.replications=2",
        "--set", "experiment.sample_sizes=10,20",
    ])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err
    assert not (out / "consistency.csv").exists()


def test_exit_code_4_on_io_failure(tmp_path, capsys):
    blocker = tmp_path / "blockfile"
    blocker.write_text("x", encoding="utf-8")
    code = main(["solve", "--seed", "1", "--out", str(blocker / "sub")])
    assert code == 4
    assert "i/o failure" in capsys.readouterr().err


def test_partial_write_cleanup(tmp_path, capsys):
    # make the second output file unwritable by occupying its name with a
    # directory: the first file must be removed again on failure
    out = tmp_path / "run"
    out.mkdir()
    (out / "estimator_trace.csv").mkdir()
    code = main([
        "simulate", "--seed", "9", "--out", str(out),
        "--set", "experiment.horizon=30",
    ])
    assert code == 4
    assert not (out / "trajectory.csv").exists()
    assert not (out / "run_manifest.json").exists()


def test_manifest_contents(tmp_path):
    out = tmp_path / "run"
    assert main(["solve", "--seed", "42", "--out", str(out)]) == 0
    with open(out / "run_manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    assert manifest["command"] == "solve"
    assert manifest["master_seed"] == 42
    assert manifest["duration_seconds"] >= 0.0
    assert manifest["config"]["model.kappa"] == "10.0"
    outputs = {o["path"]: o["sha256"] for o in manifest["outputs"]}
    assert set(outputs) == {"solution.csv"}
    digest = hashlib.sha256((out / "solution.csv").read_bytes()).hexdigest()
    assert outputs["solution.csv"] == digest


def test_same_seed_byte_identical(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = main([
            "simulate", "--seed", "77", "--out", str(out),
            "--set", "experiment.horizon=40",
        ])
        assert code == 0
        outs.append(out)
    for fname in ("trajectory.csv", "estimator_trace.csv"):
        assert (outs[0] / fname).read_bytes() == (outs[1] / fname).read_bytes()
    manifests = []
    for out in outs:
        with open(out / "run_manifest.json", encoding="utf-8") as fh:
            m = json.load(fh)
        m.pop("duration_seconds")
        manifests.append(m)
    assert manifests[0] == manifests[1]


def test_misspec_gamma_outputs(tmp_path):
    out = tmp_path / "run"
    assert main(["misspec-gamma", "--seed", "1", "--out", str(out)]) == 0
    header, rows = read_csv(out / "misspec_gamma.csv")
    assert header == ["kappa", "gamma_cross"]
    assert len(rows) == 41
    kappas = [float(r[0]) for r in rows]
    gammas = [float(r[1]) for r in rows]
    assert kappas[0] == 1.0 and kappas[-1] == 100.0
    best = max(range(41), key=lambda i: gammas[i])
    assert kappas[best] == pytest.approx(10.0, abs=2.5)


def test_finite_horizon_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["finite-horizon", "--seed", "1", "--out", str(out)]) == 0
    screen = capsys.readouterr().out
    gamma = float(screen.split("gamma = ")[1].splitlines()[0])
    header, rows = read_csv(out / "finite_horizon.csv")
    assert header == ["horizon", "q", "value_over_horizon"]
    assert len(rows) == 9
    last = [r for r in rows if float(r[0]) == 1000.0]
    assert {r[1] for r in last} == {"-30", "0", "30"}
    for r in last:
        assert abs(float(r[2]) - gamma) < 5e-3


def test_experiment_regret_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    code = main([
        "experiment", "regret", "--seed", "5", "--out", str(out), "--threads", "1",
        "--set", "experiment.scenarios=4",
        "--set", "experiment.horizon=60",
        "--set", "experiment.grid_points=60",
    ])
    assert code == 0
    header, rows = read_csv(out / "regret_mean.csv")
    assert header == ["time", "mean", "ci_low", "ci_high"]
    assert len(rows) == 61
    assert (out / "error_mean.csv").exists()
    with open(out / "fit.json", encoding="utf-8") as fh:
        fit = json.load(fh)
    assert set(fit) == {"log_squared", "log", "linear", "preferred"}
    assert set(fit["log_squared"]) == {"a", "b", "c", "rss"}
    assert fit["preferred"] in {"ln2", "ln", "linear"}


def test_module_entry_point(tmp_path):
    out = tmp_path / "run"
    proc = subprocess.run(
        [sys.executable, "-m", "ergodicmm", "solve", "--seed", "1", "--out", str(out)],
        capture_output=True,
        text=True,
        cwd=str(tmp_path),
    )
    assert proc.returncode == 0
    assert "gamma = " in proc.stdout
    assert (out / "run_manifest.json").exists()
