import json

import numpy as np
import pytest

from capcurv import capdomain as cd
from capcurv.cli import main

SMALL = ["--grid", "32x64", "--theta", str(np.pi / 3)]


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


def load(path):
    return json.loads(path.read_text())


def test_solve_writes_outputs(tmp_path):
    assert run(tmp_path, "solve", *SMALL, "--f", "even-bump:0.3") == 0
    rep = load(tmp_path / "report.json")
    assert rep["exit_status"] == 0
    assert rep["result"]["checks"]["failed"] == []
    assert rep["config"]["N1"] == 32 and rep["config"]["f"] == "even-bump:0.3"
    assert (tmp_path / "solution.csv").read_text().startswith("i,j,theta1,theta2,value")
    assert (tmp_path / "mesh.txt").read_text().startswith("v ")
    assert "started_utc" in load(tmp_path / "run_info.json")


def test_report_bytes_are_deterministic(tmp_path):
    got = []
    for _ in range(2):
        assert run(tmp_path, "solve", *SMALL, "--f", "const:1") == 0
        got.append(((tmp_path / "report.json").read_bytes(), (tmp_path / "solution.csv").read_bytes()))
    assert got[0] == got[1]


def test_verify_round_cap(tmp_path):
    g = cd.build_grid(np.pi / 3, 2, 32, 64)
    sol = tmp_path / "ell.csv"
    sol.write_text(cd.field_to_csv(cd.ell_field(g)))
    # h = ell has radii (1, 1), so sigma_2 / sigma_1 = 1/2 and f = 2
    assert run(tmp_path, "verify", *SMALL, "--f", "const:2", "--solution", str(sol)) == 0
    assert load(tmp_path / "verify.json")["result"]["failed"] == []


def test_verify_flags_corrupted_solution(tmp_path):
    src = tmp_path / "src"
    assert run(src, "solve", *SMALL, "--f", "even-bump:0.3") == 0
    g = cd.build_grid(np.pi / 3, 2, 32, 64)
    h = cd.field_from_csv((src / "solution.csv").read_text(), g)
    bad = tmp_path / "bad.csv"
    bad.write_text(cd.field_to_csv(h.replace(values=10.0 * h.values)))
    assert run(tmp_path, "verify", *SMALL, "--f", "even-bump:0.3", "--solution", str(bad)) == 4
    assert "equation_residual" in load(tmp_path / "verify.json")["result"]["failed"]


def test_verify_grid_mismatch_is_precondition(tmp_path):
    g = cd.build_grid(np.pi / 3, 2, 16, 32)
    sol = tmp_path / "ell.csv"
    sol.write_text(cd.field_to_csv(cd.ell_field(g)))
    assert run(tmp_path, "verify", *SMALL, "--f", "const:2", "--solution", str(sol)) == 2


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"theta": 1.0, "bogus": 3}))
    assert run(tmp_path, "solve", "--config", str(cfg)) == 2


def test_config_values_and_flag_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"theta": 1.2, "grid": "16x32", "f": "const:1"}))
    assert run(tmp_path, "solve", "--config", str(cfg), "--theta", str(np.pi / 3)) == 0
    got = load(tmp_path / "report.json")["config"]
    assert got["theta"] == pytest.approx(np.pi / 3) and got["N1"] == 16


def test_non_even_f_file_is_rejected(tmp_path):
    g = cd.build_grid(np.pi / 3, 2, 32, 64)
    f = cd.ScalarField(g, 1.0 + 0.1 * cd.coord_field(g, 1).values)
    path = tmp_path / "f.csv"
    path.write_text(cd.field_to_csv(f))
    assert run(tmp_path, "solve", *SMALL, "--f", f"file:{path}") == 2


def test_bad_inputs_are_preconditions(tmp_path):
    assert run(tmp_path, "solve", "--grid", "32x63") == 2
    assert run(tmp_path, "solve", *SMALL, "--f", "const:-1") == 2
    assert run(tmp_path, "solve", *SMALL, "--f", "weird:1") == 2
    assert run(tmp_path, "solve", "--grid", "32x64", "--theta", "2.0") == 2
    assert run(tmp_path, "solve", "--grid", "banana") == 2


def test_counterexample_command(tmp_path):
    # the Minkowski residuals need the default 64x128 grid to fall below 1e-3
    assert run(tmp_path, "counterexample", "--theta", str(np.pi / 3)) == 0
    body = load(tmp_path / "counterexample.json")["result"]
    assert body["pass"] is True and body["minkowski_pass"] is True
    assert (tmp_path / "moment.csv").read_text().startswith("t,I\n")


def test_counterexample_t_beyond_window(tmp_path):
    assert run(tmp_path, "counterexample", *SMALL, "--t-samples", "0.1,0.5,1,5") == 3
    assert load(tmp_path / "counterexample.json")["exit_status"] == 3


def test_radii_command(tmp_path):
    assert run(tmp_path, "radii", *SMALL, "--f", "even-bump:0.3") == 0
    body = load(tmp_path / "radii.json")["result"]
    assert body["relation"]["pass"] and body["radii"]["cw_pass"]


def test_inequalities_command(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"maclaurin_count": 2000, "concavity_count": 500, "lambdas": [[1.0, 2.0, 3.0]]}))
    assert run(tmp_path, "inequalities", "--config", str(cfg)) == 0
    assert load(tmp_path / "inequalities.json")["result"]["total_violations"] == 0
    cfg.write_text(json.dumps({"lambdas": [[-1.0, 2.0, 3.0]]}))
    assert run(tmp_path, "inequalities", "--config", str(cfg)) == 2
