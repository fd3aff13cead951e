import json
import subprocess
import sys

import pytest

from conftest import small_config
from fedpoison.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from fedpoison.config import config_to_dict


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(config_to_dict(small_config(attack={"kind": "updateflip"},
                                                        malicious_ratio=0.25))))
    return p


def test_feasibility_reports_71(capsys):
    assert main(["feasibility"]) == EXIT_OK
    assert "71 of 100" in capsys.readouterr().out
    assert main(["feasibility", "--model", "hypergeometric"]) == EXIT_OK
    assert "69 of 100" in capsys.readouterr().out
    assert main(["feasibility", "--alpha", "0.1", "--rounds", "5"]) == EXIT_OK
    assert "1e-05" in capsys.readouterr().out


def test_run_then_refuse_then_force(cfg_path, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(cfg_path), "--out", str(out)]) == EXIT_OK
    assert (out / "rounds.jsonl").exists()
    assert main(["run", str(cfg_path), "--out", str(out)]) == EXIT_CONFIG
    assert "already exists" in capsys.readouterr().err
    assert main(["run", str(cfg_path), "--out", str(out), "--force", "--seed", "5"]) == EXIT_OK
    assert json.loads((out / "config.json").read_text())["seed"] == 5


def test_pair_metrics_sweep_plot(cfg_path, tmp_path, capsys):
    pair = tmp_path / "pair"
    assert main(["pair", str(cfg_path), "--out", str(pair)]) == EXIT_OK
    assert "BDA" in capsys.readouterr().out
    assert main(["metrics", str(pair / "attacked")]) == EXIT_OK
    assert "BDA" in capsys.readouterr().out

    sweep = tmp_path / "sweep"
    assert main(["sweep", str(cfg_path), "--out", str(sweep), "--ratios", "0,12.5,25",
                 "--settings", "ideal"]) == EXIT_OK
    rows = json.loads((sweep / "sweep.json").read_text())["rows"]
    assert [r["ratio"] for r in rows] == [0.0, 0.125, 0.25]

    svg = tmp_path / "acc.svg"
    assert main(["plot", str(sweep), "--kind", "acc_vs_ratio", "-o", str(svg)]) == EXIT_OK
    assert svg.read_text().startswith("<svg")
    assert main(["plot", str(pair / "attacked"), "--kind", "series"]) == EXIT_OK


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"dataset": {}, "fl": {"clientz": 1}}))
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "fl.clientz" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert main(["plot", str(tmp_path), "--kind", "bsa_vs_ratio"]) == EXIT_DATA


def test_data_error_exit_3(tmp_path, capsys):
    cfg = tmp_path / "csv.json"
    cfg.write_text(json.dumps({"dataset": {"kind": "csv", "path": str(tmp_path / "nope.csv")}}))
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert "data error" in capsys.readouterr().err


def test_metrics_on_non_run_dir(tmp_path):
    assert main(["metrics", str(tmp_path)]) == EXIT_DATA


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "fedpoison", "feasibility", "--n", "100"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "71" in r.stdout
