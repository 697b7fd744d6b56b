import csv
import json
import os
import subprocess
import sys

import pytest

from mane_lab import acceptance, cli
from mane_lab.acceptance import CriterionResult


def write_config(path, cfg):
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return str(path)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


INTEGRATE = {"system": "flat", "integrate": {"base": [0.5, -0.25], "momentum": [0.0, 0.0], "duration": 1.0}}
CU = {"system": "flat", "cu": {"k_lo": -0.1, "k_hi": 0.2, "tol": 0.05, "T_grid": [6.0, 12.0]},
      "minimize": {"starts": 2}}
BARRIER = {"system": "flat", "barrier": {"x0": [0.0, 0.0], "T_grid": [1.0, 2.0, 4.0, 8.0]},
           "minimize": {"starts": 2}}
MEASURES = {"system": "psl2r", "measures": {"kind": "horocycle", "length": 5.0, "rescale": [0.0, 2.0]}}


def test_integrate_flat_zero_momentum(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["integrate", "--config", write_config(tmp_path / "c.json", INTEGRATE), "--out", str(out)]) == 0
    rows = read_csv(out / "trajectory.csv")
    assert rows[0][:6] == ["t", "x0", "x1", "p_x0", "p_x1", "H"]
    body = rows[1:]
    assert len(body) > 2
    assert {tuple(r[1:3]) for r in body} == {("0.5", "-0.25")}
    assert float(body[-1][0]) == 1.0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["results"]["final_state"]["base"] == [0.5, -0.25]
    assert set(summary["provenance"]) == {"config_sha256", "seed", "build"}


@pytest.mark.parametrize("command,cfg,name,header", [
    ("cu", CU, "sweep.csv", ["k", "T", "loop_action", "loop_energy"]),
    ("barrier", BARRIER, "barrier_profile.csv", ["T", "hT", "hT_plus_cT"]),
    ("measures", MEASURES, "atoms.csv", ["x", "y", "theta", "v_x", "v_y", "v_theta", "weight"]),
])
def test_csv_headers(tmp_path, command, cfg, name, header):
    out = tmp_path / "out"
    assert cli.main([command, "--config", write_config(tmp_path / "c.json", cfg), "--out", str(out)]) == 0
    raw = (out / name).read_bytes()
    assert raw.endswith(b"\n") and b"\r" not in raw
    assert read_csv(out / name)[0] == header


def test_cu_summary(tmp_path):
    summary = cli.run("cu", CU, str(tmp_path))
    assert summary["results"]["contains_reference"]
    assert summary["results"]["upper_is_heuristic"]


def test_measures_summary(tmp_path):
    cfg = json.loads(json.dumps(MEASURES))
    cfg["measures"]["compare_with"] = {"p_alpha": 0.0, "p_beta": 0.5}
    cfg["measures"]["length"] = 50.0
    res = cli.run("measures", cfg, str(tmp_path))["results"]
    assert res["mean_energy"] == pytest.approx(0.25, abs=1e-8)
    assert res["action_L_plus_c"] == pytest.approx(0.0, abs=1e-6)
    assert res["graph_witness"] is not None
    assert res["first_integrals"]["f"] == pytest.approx([-0.5, -0.5], abs=1e-7)


def test_summary_is_deterministic_and_round_trips(tmp_path):
    path = write_config(tmp_path / "c.json", BARRIER)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["barrier", "--config", path, "--out", str(a), "--seed", "3"]) == 0
    assert cli.main(["barrier", "--config", path, "--out", str(b), "--seed", "3"]) == 0
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    assert (a / "barrier_profile.csv").read_bytes() == (b / "barrier_profile.csv").read_bytes()

    embedded = json.loads((a / "summary.json").read_text())["config"]
    assert embedded["seed"] == 3
    c = tmp_path / "c"
    assert cli.main(["barrier", "--config", write_config(tmp_path / "e.json", embedded), "--out", str(c)]) == 0
    assert (c / "summary.json").read_bytes() == (a / "summary.json").read_bytes()


def test_threads_do_not_change_results(tmp_path, monkeypatch):
    path = write_config(tmp_path / "c.json", CU)
    monkeypatch.setenv("MANE_LAB_THREADS", "3")
    assert cli._threads(None) == 3
    assert cli._threads(2) == 2
    assert cli.main(["cu", "--config", path, "--out", str(tmp_path / "a")]) == 0
    monkeypatch.delenv("MANE_LAB_THREADS")
    assert cli._threads(None) == 1
    assert cli.main(["cu", "--config", path, "--out", str(tmp_path / "b"), "--threads", "1"]) == 0
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()
    monkeypatch.setenv("MANE_LAB_THREADS", "zero")
    assert cli.main(["cu", "--config", path, "--out", str(tmp_path / "c")]) == 1


@pytest.mark.parametrize("cfg", [
    {"system": "flat"},
    {"system": "torus", "integrate": {"base": [0, 0], "momentum": [0, 0], "duration": 1}},
    {"system": "flat", "integrate": {"base": [0, 0], "momentum": [0, 0], "duration": -1}},
    {"system": "flat", "integrate": {"base": [0, 0, 0], "momentum": [0, 0], "duration": 1}},
    {"system": "flat", "integrate": {"base": [0, 0], "duration": 1}},
    {"system": "flat", "command": "cu", "integrate": {"base": [0, 0], "momentum": [0, 0], "duration": 1}},
    {"system": "flat", "integrator": {"step": 0}, "integrate": {"base": [0, 0], "momentum": [0, 0], "duration": 1}},
    {"system": "flat", "extra": 1, "integrate": {"base": [0, 0], "momentum": [0, 0], "duration": 1}},
])
def test_invalid_configs_exit_1(tmp_path, cfg):
    assert cli.main(["integrate", "--config", write_config(tmp_path / "c.json", cfg), "--out", str(tmp_path)]) == 1


def test_unreadable_config_and_output(tmp_path):
    assert cli.main(["integrate", "--config", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert cli.main(["integrate", "--config", str(bad)]) == 1
    blocker = tmp_path / "file"
    blocker.write_text("x")
    path = write_config(tmp_path / "c.json", INTEGRATE)
    assert cli.main(["integrate", "--config", path, "--out", str(blocker / "sub")]) == 1


def test_numerical_failure_exit_2(tmp_path):
    cfg = {"system": "heisenberg", "minimize": {"max_iters": 1, "starts": 1},
           "minimize_path": {"T": 6.0, "x0": [0, 0, 0], "x1": [1, 2, 3], "mode": "endpoints"}}
    out = tmp_path / "out"
    assert cli.main(["minimize", "--config", write_config(tmp_path / "c.json", cfg), "--out", str(out)]) == 2
    diag = json.loads((out / "diagnostics.json").read_text())
    assert diag["error"] == "OptimizationError" and diag["diagnostics"]


def test_verify_paper_pass_and_mismatch(tmp_path, monkeypatch, capsys):
    cfg = {"system": "heisenberg", "verify_paper": {"criteria": [5]}}
    out = tmp_path / "ok"
    assert cli.main(["verify-paper", "--config", write_config(tmp_path / "c.json", cfg), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["results"]["failed"] == []
    assert summary["results"]["highlights"]["heisenberg"]["vertical_orbit_action"] == 0.0
    assert read_csv(out / "acceptance.csv")[0] == ["criterion", "title", "passed", "detail"]

    failing = dict(acceptance.CRITERIA)
    failing[7] = lambda ctx: CriterionResult(7, "forced", False, "forced failure", {})
    monkeypatch.setattr(acceptance, "CRITERIA", failing)
    cfg = {"system": "heisenberg", "verify_paper": {"criteria": [5, 7]}}
    code = cli.main(["verify-paper", "--config", write_config(tmp_path / "d.json", cfg), "--out", str(tmp_path / "bad")])
    assert code == 3
    err = capsys.readouterr().err
    assert "7" in err.split("violated criteria:")[1]


def test_symcheck_identity(tmp_path):
    cfg = {"system": "heisenberg", "symcheck": {"map": {"kind": "identity"}, "orbit_k": [0.2, 0.3], "orbit_nodes": 400}}
    res = cli.run("symcheck", cfg, str(tmp_path))["results"]
    assert [r["residual"] for r in res["action_identity"]] == [0.0, 0.0]
    assert read_csv(tmp_path / "action_identity.csv")[0] == ["k", "T", "residual"]


def test_console_script(tmp_path):
    path = write_config(tmp_path / "c.json", INTEGRATE)
    proc = subprocess.run([sys.executable, "-m", "mane_lab.cli", "integrate", "--config", path,
                           "--out", str(tmp_path / "o")], capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert os.path.exists(tmp_path / "o" / "summary.json")
