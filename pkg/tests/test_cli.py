import json
import subprocess
import sys

import pytest

from dbgtorus.cli import main


def run(tmp_path, *argv):
    return main(["--out", str(tmp_path), *argv])


def report(tmp_path, name):
    return json.loads((tmp_path / name).read_text())


def test_build_profile(tmp_path):
    assert run(tmp_path, "build-profile") == 0
    doc = report(tmp_path, "profile.json")
    assert doc["schema"] == "dbgtorus/build-profile/v1"
    assert doc["result"]["certificate"]["passed"]


def test_solve_metric_then_jacobi_reads_it(tmp_path):
    assert run(tmp_path, "solve-metric", "--a", "25") == 0
    met = tmp_path / "metric.json"
    doc = json.loads(met.read_text())
    assert doc["result"]["r2"] == pytest.approx(0.2288762072638041, abs=1e-12)
    assert run(tmp_path, "jacobi", "--metric", str(met)) == 0
    j = report(tmp_path, "chord.json")
    assert j["config"]["a"] == 25.0
    assert "metric" in j["inputs_sha256"]
    assert (tmp_path / "chord.csv").read_text().startswith("t,r,K,")


def test_integrate_csv(tmp_path):
    assert run(tmp_path, "integrate", "--T", "2") == 0
    rows = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert rows[0] == "t,x,y,px,py,H,clairaut,event"
    assert len(rows) > 100
    assert report(tmp_path, "integrate.json")["result"]["max_energy_drift"] <= 1e-8


def test_lyapunov_small(tmp_path):
    assert run(tmp_path, "lyapunov", "--n", "4", "--T", "100") == 0
    res = report(tmp_path, "lyapunov.json")["result"]
    assert len(res["per_orbit"]) == 4
    assert res["params"]["n_orbits"] == 4


def test_returnmap_small(tmp_path):
    assert run(tmp_path, "returnmap", "--n", "64", "--eps-grid", "1e-1,1e-2") == 0
    res = report(tmp_path, "closeness.json")["result"]
    assert len(res["entries"]) == 2 and len(res["order_c0"]) == 1


def test_figures(tmp_path):
    assert run(tmp_path, "figure", "rho") == 0
    assert len((tmp_path / "rho.csv").read_text().splitlines()) == 1502
    assert run(tmp_path, "figure", "riccati") == 0
    assert report(tmp_path, "riccati.json")["result"]["u_exit"] >= -1e-8


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("common:\n  a: 25\nlyapunov:\n  n: 3\n  T: 100\n  seed: 7\n")
    out = tmp_path / "o"
    assert main(["--config", str(cfg), "--out", str(out), "lyapunov", "--seed", "8"]) == 0
    doc = json.loads((out / "lyapunov.json").read_text())
    assert doc["config"]["a"] == 25 and doc["config"]["n"] == 3 and doc["config"]["seed"] == 8
    assert "config_file" in doc["inputs_sha256"]


def test_out_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("DBGTORUS_OUT", str(tmp_path / "env"))
    assert main(["build-profile"]) == 0
    assert (tmp_path / "env" / "profile.json").exists()


def test_unknown_config_key_is_an_error(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("lyapunov:\n  bogus: 1\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path), "lyapunov"]) == 2
    rec = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert rec["error"] == "UsageError"
    assert (tmp_path / "error.json").exists()


def test_domain_error_exit_code(tmp_path, capsys):
    assert run(tmp_path, "integrate", "--q", "1,2,3") == 2
    assert "expected 2" in json.loads(capsys.readouterr().err.strip())["message"]


def test_byte_identical_reruns(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["--out", str(d), "lyapunov", "--n", "3", "--T", "100", "--seed", "5"]) == 0
        assert main(["--out", str(d), "figure", "rho"]) == 0
    for name in ("lyapunov.json", "rho.csv", "rho.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "dbgtorus", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "lens-check" in r.stdout
