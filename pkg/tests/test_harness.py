import csv
import json
import os

import pytest

from conftest import small_config
from fedpoison.errors import ConfigError, DataError
from fedpoison.harness import (
    OUTPUT_ENV,
    RunExistsError,
    execute,
    pair_runs,
    read_run,
    reexecute,
    rounds_jsonl,
    run_paired,
    run_single,
    run_sweep,
    summarize,
    write_logs,
)

ATTACK = {"attack": {"kind": "updateflip"}, "malicious_ratio": 0.25}


def test_write_read_roundtrip(tmp_path):
    cfg = small_config(**ATTACK)
    art = execute(cfg)
    write_logs(art, tmp_path / "run")
    for name in ("config.json", "rounds.jsonl", "summary.json"):
        assert (tmp_path / "run" / name).exists()
    back = read_run(tmp_path / "run")
    assert back.records == art.records
    assert back.summary == art.summary
    assert back.config == art.config
    assert len(back.records) == cfg.fl.rounds
    assert [r.t for r in back.records] == list(range(1, cfg.fl.rounds + 1))
    doc = json.loads((tmp_path / "run" / "summary.json").read_text())
    assert doc["version"] and doc["wall_time"] >= 0


def test_rounds_log_has_no_timing():
    art = execute(small_config(**ATTACK))
    for line in rounds_jsonl(art.records).splitlines():
        keys = json.loads(line).keys()
        assert not any("time" in k for k in keys)


def test_summarize_recomputes_same_numbers(tmp_path):
    art = execute(small_config(**ATTACK))
    write_logs(art, tmp_path)
    before = (tmp_path / "summary.json").read_text()
    summarize(tmp_path)
    assert json.loads((tmp_path / "summary.json").read_text())["metrics"] == json.loads(before)["metrics"]


def test_refuses_overwrite_without_force(tmp_path):
    cfg = small_config(**ATTACK)
    run_single(cfg, tmp_path)
    with pytest.raises(RunExistsError):
        run_single(cfg, tmp_path)
    run_single(cfg, tmp_path, force=True)


def test_reexecute_is_byte_identical(tmp_path):
    cfg = small_config(**ATTACK)
    art = run_single(cfg, tmp_path)
    assert rounds_jsonl(reexecute(tmp_path)) == (tmp_path / "rounds.jsonl").read_text()
    assert rounds_jsonl(art.records) == (tmp_path / "rounds.jsonl").read_text()


def test_read_run_errors(tmp_path):
    with pytest.raises(DataError, match="missing"):
        read_run(tmp_path)
    art = execute(small_config(**ATTACK))
    write_logs(art, tmp_path)
    (tmp_path / "rounds.jsonl").write_text("{broken\n")
    with pytest.raises(DataError, match="rounds.jsonl:1"):
        read_run(tmp_path)


def test_pair_refuses_seed_mismatch():
    a = execute(small_config(**ATTACK), attack_enabled=False)
    b = execute(small_config(seed=4, **ATTACK))
    with pytest.raises(ConfigError, match="seed"):
        pair_runs(a, b)


def test_zero_ratio_pair_is_identical():
    clean, attacked, d = run_paired(small_config(attack={"kind": "updateflip"}, malicious_ratio=0.0),
                                    persist=False)
    assert rounds_jsonl(clean.records) == rounds_jsonl(attacked.records)
    assert d["bda"] == 0.0 and d["bdv"] == 0.0


def test_self_pair_bda_exactly_zero():
    art = execute(small_config(**ATTACK))
    assert pair_runs(art, art)["bda"] == 0.0


@pytest.mark.parametrize("seed", range(4))
def test_zero_noise_attack_barely_degrades(seed):
    # zero updates still dilute the average; pilot over seeds 0-7 gave BDA 0.0 each
    cfg = small_config(seed=seed, dataset={"n_per_class": 150}, fl={"rounds": 15},
                       attack={"kind": "noise", "params": {"mu": 0.0, "sigma": 0.0}},
                       malicious_ratio=0.25)
    _, _, d = run_paired(cfg, persist=False)
    assert abs(d["bda"]) <= 0.05


def test_paired_layout(tmp_path):
    clean, attacked, d = run_paired(small_config(**ATTACK), tmp_path)
    for sub in ("clean", "attacked"):
        assert (tmp_path / sub / "rounds.jsonl").exists()
    pair = json.loads((tmp_path / "pair.json").read_text())
    assert pair["bda"] == d["bda"] and pair["seed"] == 3
    assert read_run(tmp_path / "attacked").summary.bda == d["bda"]
    assert read_run(tmp_path / "clean").attack_enabled is False
    # the metrics command finds the clean sibling on its own
    summarize(tmp_path / "attacked")
    assert read_run(tmp_path / "attacked").summary.bda == pytest.approx(d["bda"], abs=0)
    with pytest.raises(RunExistsError):
        run_paired(small_config(**ATTACK), tmp_path)


def test_paired_requires_attack():
    with pytest.raises(ConfigError):
        run_paired(small_config(), persist=False)


def test_sweep_table_and_resume(tmp_path):
    cfg = small_config(**ATTACK)
    ratios = [0.0, 0.125, 0.25, 0.375, 0.5]
    table = run_sweep(cfg, ratios, ["practical", "ideal"], tmp_path)
    assert len(table) == 10
    assert [(r["setting"], r["ratio"]) for r in table] == [(s, x) for s in ("practical", "ideal") for x in ratios]
    for row in table:
        assert row["bda"] is not None and row["attack"] == "updateflip"
    zero = [r for r in table if r["ratio"] == 0.0]
    assert all(r["bda"] == 0.0 for r in zero)

    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10 and float(rows[3]["bda"]) == pytest.approx(table[3]["bda"])
    assert json.loads((tmp_path / "sweep.json").read_text())["rows"] == table

    cell = tmp_path / "ideal" / "r25" / "summary.json"
    stamp = cell.stat().st_mtime_ns
    os.remove(tmp_path / "practical" / "r50" / "summary.json")
    again = run_sweep(cfg, ratios, ["practical", "ideal"], tmp_path)
    assert cell.stat().st_mtime_ns == stamp
    assert again == table


def test_sweep_clean_run_shared_across_ratios(tmp_path):
    cfg = small_config(**ATTACK)
    run_sweep(cfg, [0.125, 0.5], ["ideal"], tmp_path)
    clean = read_run(tmp_path / "ideal" / "clean")
    for ratio in (0.125, 0.5):
        alone = execute(cfg.replace(malicious_ratio=ratio), attack_enabled=False)
        assert alone.acc == clean.acc


def test_one_ratio_sweep_matches_paired_run(tmp_path):
    cfg = small_config(**ATTACK)
    row = run_sweep(cfg, [0.25], ["ideal"], tmp_path / "s")[0]
    _, attacked, d = run_paired(cfg.replace(preset="ideal"), persist=False)
    assert row["bda"] == d["bda"] and row["acc_mean"] == attacked.summary.acc_mean


def test_sweep_processes_match_serial(tmp_path):
    cfg = small_config(**ATTACK)
    a = run_sweep(cfg, [0.125, 0.25], ["ideal"], tmp_path / "a")
    b = run_sweep(cfg, [0.125, 0.25], ["ideal"], tmp_path / "b", processes=2)
    assert a == b


def test_sweep_rejects_percent_ratios(tmp_path):
    with pytest.raises(ConfigError, match="ratios"):
        run_sweep(small_config(**ATTACK), [5], ["ideal"], tmp_path)


def test_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    cfg = small_config(name="envrun", **ATTACK)
    run_single(cfg)
    assert (tmp_path / "envrun" / "rounds.jsonl").exists()
