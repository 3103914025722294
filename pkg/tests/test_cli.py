import csv
import json
import subprocess
import sys

import pytest

from courteous.cli import main


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def selfish_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = run("simulate", "lane_change_slow", "--set", "courtesy.lambda=0", "--out", out)
    return code, out


def test_simulate_writes_files(selfish_run):
    code, out = selfish_run
    assert code == 0
    stem = "lane_change_slow_not_there_0"
    assert (out / f"{stem}.csv").is_file()
    summary = read_rows(out / f"{stem}_summary.csv")
    assert summary[0]["merge_order"] == "Ahead"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert manifest["overrides"] == ["courtesy.lambda=0"]
    assert manifest["resolved"]["scenario"]["courtesy"]["lambda"] == 0


def test_rerun_is_byte_identical(selfish_run, tmp_path):
    _, out = selfish_run
    assert run("rerun", out / "manifest.json", "--out", tmp_path) == 0
    for name in ("lane_change_slow_not_there_0.csv", "lane_change_slow_not_there_0_summary.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


@pytest.mark.parametrize("argv", [
    ["simulate", "no_such_scenario"],
    ["simulate", "lane_change_slow", "--set", "courtesy.bogus=1"],
    ["simulate", "lane_change_slow", "--set", "novalue"],
    ["simulate"],
    ["simulate", "lane_change_slow", "--mode", "rude"],
    ["sweep", "lane_change_slow", "--lambda-grid", "1,-2"],
    ["simulate", "lane_change_slow", "--workers", "0"],
    ["irl-fit", "--set", "irl.hessian_jitter=0"],
    ["irl-fit", "--set", "irl.no_such_field=1"],
    ["irl-fit", "--set", "mystery=1"],
    ["irl-eval", "--weights", "missing.json"],
    ["frobnicate"],
    [],
])
def test_usage_errors_exit_2(argv, tmp_path, capsys):
    assert run(*argv, *(["--out", tmp_path] if argv and argv[0] != "frobnicate" else [])) == 2
    assert "error" in capsys.readouterr().err


def test_runtime_failure_exits_3(tmp_path, monkeypatch):
    from courteous import cli, sim

    def broken(*a, **k):
        raise sim.SimulationError("planner blew up", None)

    monkeypatch.setattr(cli, "simulate", broken)
    assert run("simulate", "lane_change_slow", "--out", tmp_path) == 3
    assert (tmp_path / "manifest.json").is_file()  # written before any output


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("COURTEOUS_OUT", str(tmp_path))
    assert run("simulate", "lane_change_slow", "--set", "duration=2",
               "--mode", "maintain", "--set", "courtesy.lambda=5") == 0
    assert (tmp_path / "simulate" / "lane_change_slow_maintain_5.csv").is_file()


def test_sweep_rows(tmp_path):
    assert run("sweep", "--scenario", "lane_change_slow", "--set", "duration=3",
               "--lambda-grid", "0,10", "--out", tmp_path) == 0
    rows = read_rows(tmp_path / "lane_change_slow_not_there_sweep.csv")
    assert [r["lambda"] for r in rows] == ["0.0", "10.0"]


def test_irl_fit_and_eval(tmp_path):
    fit_dir, eval_dir = tmp_path / "fit", tmp_path / "eval"
    common = ["--set", "synthetic.length=10", "--seed", "2"]
    assert run("irl-fit", "--count", 5, "--train-size", 3, *common, "--out", fit_dir) == 0
    for name in ("weights_courtesy.json", "weights_plain.json", "curve_courtesy.csv",
                 "curve_plain.csv", "fit_summary.csv", "train_demos.json", "test_demos.json"):
        assert (fit_dir / name).is_file()
    w = json.loads((fit_dir / "weights_courtesy.json").read_text())
    assert w["theta_g"] == 1.0
    assert json.loads((fit_dir / "weights_plain.json").read_text())["lambda_c"] == 0.0
    curve = read_rows(fit_dir / "curve_courtesy.csv")
    assert list(curve[0]) == ["epoch", "nll"]

    assert run("irl-eval", "--demos", fit_dir / "test_demos.json", "--weights",
               fit_dir / "weights_courtesy.json", fit_dir / "weights_plain.json",
               "--out", eval_dir) == 0
    ab = read_rows(eval_dir / "ab_summary.csv")
    assert [r["weights"] for r in ab] == ["weights_courtesy", "weights_plain"]
    assert len(read_rows(eval_dir / "eval_weights_courtesy.csv")) == 2
    assert read_rows(eval_dir / "gaps_weights_plain.csv")

    again = tmp_path / "again"
    assert run("rerun", fit_dir / "manifest.json", "--out", again) == 0
    for name in ("weights_courtesy.json", "curve_plain.csv", "fit_summary.csv"):
        assert (again / name).read_bytes() == (fit_dir / name).read_bytes()


def test_single_variant_fit(tmp_path):
    assert run("irl-fit", "--count", 3, "--courtesy-feature", "off", "--set",
               "synthetic.length=8", "--out", tmp_path) == 0
    assert not (tmp_path / "weights_courtesy.json").exists()
    assert (tmp_path / "weights_plain.json").exists()


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "courteous.cli", "simulate", "nowhere",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "unknown scenario" in proc.stderr
