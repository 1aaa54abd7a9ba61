import json
import subprocess
import sys

import pytest

from conftest import small_document

from dcvrt.cli import EXIT_CONFIG, EXIT_OK, EXIT_SIM, EXIT_UNSTABLE, main
from dcvrt.report import read_metrics_csv

SAG = {"model": "thevenin", "E": 1.0, "X_th": 0.2, "tau": 0.1,
       "events": [{"time": 0.1, "kind": "set_thevenin_reactance", "value": 0.4}]}


@pytest.fixture
def scenario_file(tmp_path):
    doc = small_document(grid=SAG, synthesis={"steps": 40, "max_iter": 5, "init_gain": 0.5})
    path = tmp_path / "small.json"
    path.write_text(json.dumps(doc))
    return path


def test_run_writes_artifacts(scenario_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--scenario", str(scenario_file), "--out", str(out), "--controller", "centralized"]) == EXIT_OK
    assert {p.name for p in out.iterdir()} == {"trajectory.csv", "metrics.csv", "manifest.json"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "completed" and manifest["seed"] == 7
    assert "completed" in capsys.readouterr().out


def test_manifest_reproduces_run(scenario_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--scenario", str(scenario_file), "--out", str(a), "--controller", "decentralized",
                 "--seed", "11"]) == EXIT_OK
    assert main(["run", "--scenario", str(a / "manifest.json"), "--out", str(b)]) == EXIT_OK
    assert read_metrics_csv(a / "metrics.csv") == read_metrics_csv(b / "metrics.csv")
    assert (a / "trajectory.csv").read_text() == (b / "trajectory.csv").read_text()


def test_collapse_exits_2(tmp_path):
    grid = {"model": "thevenin", "E": 1.0, "X_th": 0.2, "tau": 0.1,
            "events": [{"time": 0.05, "kind": "set_thevenin_reactance", "value": 5.0}]}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(small_document(grid=grid)))
    assert main(["run", "--scenario", str(path), "--out", str(tmp_path / "o")]) == EXIT_SIM


@pytest.mark.parametrize("argv", [
    ["run", "--bogus"],
    ["frobnicate"],
    [],
    ["run", "--scenario", "no-such-scenario"],
    ["run", "--dt", "-1"],
    ["sweep-delay", "--delays", "a,b"],
])
def test_usage_and_config_errors(argv, capsys):
    assert main(argv) == EXIT_CONFIG
    assert capsys.readouterr().err


def test_sweep_rows(scenario_file, tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["sweep-delay", "--scenario", str(scenario_file), "--controller", "centralized",
                 "--delays", "0.01,0.05,0.1,0.2", "--out", str(out)]) == EXIT_OK
    rows = read_metrics_csv(out / "metrics.csv")
    assert [r["scheme"] for r in rows] == [f"centralized_delay_{d}ms" for d in (10, 50, 100, 200)]
    assert len(capsys.readouterr().out.strip().splitlines()) == 4


def test_sweep_needs_centralized(scenario_file, tmp_path):
    assert main(["sweep-delay", "--scenario", str(scenario_file), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_synth_then_check(scenario_file, tmp_path, capsys):
    out = tmp_path / "g"
    assert main(["synth-gains", "--scenario", str(scenario_file), "--controller", "decentralized",
                 "--out", str(out)]) == EXIT_OK
    gains = json.loads((out / "gains.json").read_text())
    assert set(gains) == {"v_ref", "k_p", "k_q"} and gains["k_q"]
    capsys.readouterr()
    assert main(["check-stability", "--scenario", str(scenario_file), "--controller", "decentralized",
                 "--gains", str(out / "gains.json")]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["stable"] and report["network"]["method"] == "convex_region"


def test_zero_gains_fail_certification(tmp_path, capsys):
    zero = tmp_path / "zero.json"
    zero.write_text(json.dumps({"k_p": {}, "k_q": {}}))
    assert main(["check-stability", "--scenario", "default", "--gains", str(zero)]) == EXIT_UNSTABLE
    report = json.loads(capsys.readouterr().out)
    assert report["network"]["spectral_radius"] == 1.0


def test_shipped_gains_certify(capsys):
    assert main(["check-stability"]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["grid_coupled"]["method"] == "spectral"


def test_bad_gains_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert main(["check-stability", "--gains", str(bad)]) == EXIT_CONFIG


def test_report_command(scenario_file, tmp_path, capsys):
    out = tmp_path / "r"
    doc = json.loads(scenario_file.read_text())
    paths = []
    for kind in ("none", "centralized", "decentralized"):
        p = tmp_path / f"{kind}.json"
        p.write_text(json.dumps({**doc, "name": kind, "controller": {**doc["controller"], "type": kind}}))
        paths.append(str(p))
    assert main(["report", "--scenarios", ",".join(paths), "--out", str(out)]) == EXIT_OK
    assert [r["scheme"] for r in read_metrics_csv(out / "metrics.csv")] == ["none", "centralized", "decentralized"]
    assert not list(out.glob("*.tmp"))


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "dcvrt", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("dcvrt ")
