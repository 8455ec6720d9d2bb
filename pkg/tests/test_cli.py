import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import FEASIBLE_SEED, box_set
from robust_hnoma.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, main, parse_config
from robust_hnoma.optimizer import RobustDesign
from robust_hnoma.scenario import ConfigError, Scenario, load_scenario, save_scenario


def write_config(path, d):
    path.write_text(json.dumps(d))
    return str(path)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_gen_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen", "--seed", "7", "--out", str(a)]) == EXIT_OK
    assert main(["gen", "--seed", "7", "--out", str(b)]) == EXIT_OK
    assert (a / "scenario.json").read_bytes() == (b / "scenario.json").read_bytes()
    s = load_scenario(a / "scenario.json")
    assert s.meta["seed"] == 7 and s.num_users == 4
    manifest = json.loads((a / "manifest_gen.json").read_text())
    assert manifest["command"] == "gen" and manifest["seed"] == 7


@pytest.mark.parametrize("cfg, field", [
    ({"scenario": {"num_users": 0}}, "scenario.num_users"),
    ({"scenario": {"bogus": 1}}, "scenario.bogus"),
    ({"solve": {"xi": 2.0}}, "solve"),
    ({"sweep": {"axis": "speed"}}, "sweep.axis"),
    ({"methods": ["tdma"]}, "methods"),
    ({"extra": {}}, "extra"),
])
def test_malformed_config_names_field(tmp_path, capsys, cfg, field):
    path = write_config(tmp_path / "c.json", cfg)
    assert main(["gen", "--config", path, "--out", str(tmp_path)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert f"config error: {field}" in err


def test_invalid_json_is_config_error(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    assert main(["solve", "--config", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "invalid JSON" in capsys.readouterr().err


def test_parse_config_defaults():
    cfg = parse_config({})
    assert cfg.methods == ["robust", "nominal", "oma1", "oma2"]
    assert cfg.solve.threshold == 3.0
    with pytest.raises(ConfigError) as exc:
        parse_config({"eval": {"n": 0}})
    assert exc.value.field == "eval"


def test_solve_writes_designs_and_traces(tmp_path, capsys):
    out = tmp_path / "run"
    code = main(["solve", "--seed", str(FEASIBLE_SEED), "--method", "robust", "--method", "oma1",
                 "--out", str(out)])
    assert code == EXIT_OK
    for m in ("robust", "oma1"):
        d = RobustDesign.from_json((out / f"design_{m}.json").read_text())
        assert d.status == "converged"
        trace = rows(out / f"trace_{m}.csv")
        assert len(trace) == d.iterations
    assert not (out / "design_nominal.json").exists()


def test_solve_infeasible_seed_exit_code(tmp_path):
    # seed 0 draws a shift that can cancel a gain
    assert main(["solve", "--seed", "0", "--method", "robust", "--out", str(tmp_path)]) == EXIT_INFEASIBLE


def test_solve_oma2_single_user_closed_form(tmp_path):
    s = Scenario(h_gain=np.array([1e-6]), g_gain=np.eye(1), alpha=np.zeros((1, 3)), kappa=np.zeros((1, 1, 3)),
                 poly=[box_set(3)], rho=0.0, sic=np.zeros((1, 1)), noise_var=1e-9)
    save_scenario(s, tmp_path / "one.json")
    cfg = write_config(tmp_path / "c.json", {"solve": {"threshold": 1.0}})
    assert main(["solve", "--config", cfg, "--scenario", str(tmp_path / "one.json"), "--method", "oma2",
                 "--out", str(tmp_path)]) == EXIT_OK
    d = json.loads((tmp_path / "design_oma2.json").read_text())
    assert d["total_power_W"] == pytest.approx(1e-3, rel=1e-12)


def test_eval_without_error_gives_pf_one(tmp_path):
    out = str(tmp_path)
    assert main(["solve", "--seed", str(FEASIBLE_SEED), "--method", "oma1", "--out", out]) == EXIT_OK
    cfg = write_config(tmp_path / "c.json", {"eval": {"h_std": 0.0, "g_std": 0.0, "n": 100}})
    assert main(["eval", "--config", cfg, "--seed", str(FEASIBLE_SEED), "--method", "oma1", "--out", out]) == EXIT_OK
    (row,) = rows(tmp_path / "eval.csv")
    assert row["method"] == "oma1" and float(row["pf"]) == 1.0 and row["n"] == "100"


def test_eval_missing_design_is_config_error(tmp_path, capsys):
    assert main(["eval", "--design", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "config error: design" in capsys.readouterr().err


def test_sweep_is_byte_identical_on_rerun(tmp_path):
    cfg = {"sweep": {"axis": "threshold", "grid": [1.0, 2.0], "seeds": [FEASIBLE_SEED]},
           "methods": ["oma1", "oma2"]}
    path = write_config(tmp_path / "c.json", cfg)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["sweep", "--config", path, "--out", str(a)]) == EXIT_OK
    assert main(["sweep", "--config", path, "--out", str(b)]) == EXIT_OK
    for name in ("sweep.csv", "sweep_records.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    table = rows(a / "sweep.csv")
    assert len(table) == 4
    assert {r["method"] for r in table} == {"oma1", "oma2"}


def test_report_summarizes_outputs(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", {"sweep": {"grid": [2.0], "seeds": [FEASIBLE_SEED]},
                                             "methods": ["oma1"]})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    assert main(["report", "--out", str(tmp_path)]) == EXIT_OK
    text = (tmp_path / "report.txt").read_text()
    assert text.startswith("== sweep.csv") and "oma1" in text


def test_report_without_outputs_is_config_error(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "robust_hnoma.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "0.1.0" in res.stdout
    res = subprocess.run([sys.executable, "-m", "robust_hnoma.cli", "gen", "--seed", "3", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and (tmp_path / "scenario.json").exists()
