"""Experiment orchestration and persistence.

A run directory holds three files:

    config.json    full config snapshot (enough to reproduce the run)
    rounds.jsonl   one JSON object per round, keys sorted, no timing data
    summary.json   windowed metrics plus wall time and library version

Paired runs live in ``<dir>/clean`` and ``<dir>/attacked`` with a
``pair.json`` next to them; sweeps lay cells out as
``<dir>/<setting>/r<ratio>/`` and export ``sweep.csv`` / ``sweep.json``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import __version__
from .config import ExperimentConfig, config_from_dict, config_to_dict
from .errors import ConfigError, DataError, FedPoisonError
from .metrics import MetricsSummary, RoundRecord, paired_degradation, summarize_run
from .simulation import Simulation

log = logging.getLogger(__name__)

__all__ = [
    "OUTPUT_ENV",
    "RunExistsError",
    "RunArtifact",
    "output_root",
    "execute",
    "rounds_jsonl",
    "write_logs",
    "read_run",
    "summarize",
    "run_single",
    "pair_runs",
    "run_paired",
    "run_sweep",
    "sweep_table_csv",
    "reexecute",
]

OUTPUT_ENV = "FEDPOISON_OUTPUT"
SWEEP_FIELDS = ("setting", "ratio", "attack", "acc_mean", "acc_std", "bsa", "bsv",
                "bda", "bdv", "window_start", "window_end")


class RunExistsError(FedPoisonError, FileExistsError):
    """Raised when a run directory already holds results and force is off."""


@dataclass
class RunArtifact:
    config: dict
    records: list
    summary: MetricsSummary
    wall_time: float
    attack_enabled: bool = True
    version: str = __version__
    path: Optional[str] = None
    extra: dict = field(default_factory=dict)

    @property
    def acc(self) -> list:
        return [r.acc for r in self.records]


def output_root(default: str = "runs") -> str:
    return os.environ.get(OUTPUT_ENV) or default


def _run_dir(cfg: ExperimentConfig, out_dir: Optional[str]) -> str:
    if out_dir is not None:
        return out_dir
    root = cfg.output_dir or output_root()
    return os.path.join(root, cfg.name)


def execute(cfg: ExperimentConfig, attack_enabled: bool = True, workers: int = 1,
            clean_records=None) -> RunArtifact:
    """Run in memory; nothing is written."""
    start = time.perf_counter()
    records, _ = Simulation(cfg, attack_enabled, workers=workers).run()
    wall = time.perf_counter() - start
    summary = summarize_run(records, cfg.window_fraction, clean_records)
    return RunArtifact(config_to_dict(cfg), records, summary, wall, attack_enabled)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def rounds_jsonl(records) -> str:
    return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records)


def _summary_doc(art: RunArtifact) -> dict:
    return {
        "attack_enabled": art.attack_enabled,
        "extra": art.extra,
        "metrics": art.summary.to_dict(),
        "rounds": len(art.records),
        "version": art.version,
        "wall_time": art.wall_time,
    }


def write_logs(art: RunArtifact, directory: str, force: bool = False) -> str:
    """Persist an artifact. Refuses to touch an existing run unless ``force``."""
    if os.path.exists(os.path.join(directory, "rounds.jsonl")) and not force:
        raise RunExistsError(f"{directory}: run already exists (use --force to overwrite)")
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "config.json"), "w") as fh:
        fh.write(_dump(art.config))
    with open(os.path.join(directory, "rounds.jsonl"), "w") as fh:
        fh.write(rounds_jsonl(art.records))
    with open(os.path.join(directory, "summary.json"), "w") as fh:
        fh.write(_dump(_summary_doc(art)))
    art.path = directory
    return directory


def _read_records(path: str) -> list:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(RoundRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, TypeError) as e:
                raise DataError(f"{path}:{lineno}: bad round record ({e})") from None
    return records


def read_run(directory: str) -> RunArtifact:
    for name in ("config.json", "rounds.jsonl"):
        if not os.path.exists(os.path.join(directory, name)):
            raise DataError(f"{directory}: missing {name}; not a run directory")
    with open(os.path.join(directory, "config.json")) as fh:
        config = json.load(fh)
    records = _read_records(os.path.join(directory, "rounds.jsonl"))
    doc = {}
    spath = os.path.join(directory, "summary.json")
    if os.path.exists(spath):
        with open(spath) as fh:
            doc = json.load(fh)
    if "metrics" in doc:
        summary = MetricsSummary(**doc["metrics"])
    else:
        summary = summarize_run(records, config.get("window_fraction", 0.1))
    return RunArtifact(config, records, summary, doc.get("wall_time", 0.0),
                       doc.get("attack_enabled", True), doc.get("version", __version__),
                       directory, doc.get("extra", {}))


def summarize(directory: str, clean_dir: Optional[str] = None) -> str:
    """Recompute the summary of a run directory from its round log and rewrite it."""
    art = read_run(directory)
    w = art.config.get("window_fraction", 0.1)
    clean = None
    if clean_dir is None and os.path.basename(os.path.normpath(directory)) == "attacked":
        sibling = os.path.join(os.path.dirname(os.path.normpath(directory)), "clean")
        if os.path.exists(os.path.join(sibling, "rounds.jsonl")):
            clean_dir = sibling
    if clean_dir is not None:
        clean = read_run(clean_dir).records
    art.summary = summarize_run(art.records, w, clean)
    path = os.path.join(directory, "summary.json")
    with open(path, "w") as fh:
        fh.write(_dump(_summary_doc(art)))
    return path


def reexecute(directory: str) -> list:
    """Re-run a persisted artifact from its config snapshot; returns the fresh records."""
    art = read_run(directory)
    cfg = config_from_dict(art.config)
    records, _ = Simulation(cfg, art.attack_enabled).run()
    return records


# ---------------------------------------------------------------------------
# single / paired
# ---------------------------------------------------------------------------

def run_single(cfg: ExperimentConfig, out_dir: Optional[str] = None, force: bool = False,
               workers: int = 1) -> RunArtifact:
    directory = _run_dir(cfg, out_dir)
    if os.path.exists(os.path.join(directory, "rounds.jsonl")) and not force:
        raise RunExistsError(f"{directory}: run already exists (use --force to overwrite)")
    art = execute(cfg, True, workers)
    write_logs(art, directory, force=force)
    return art


def pair_runs(clean: RunArtifact, attacked: RunArtifact) -> dict:
    """BDA/BDV of two runs; refuses pairs that do not share seeds."""
    if clean.config.get("seed") != attacked.config.get("seed"):
        raise ConfigError(
            f"paired runs must share a seed (clean {clean.config.get('seed')}, "
            f"attacked {attacked.config.get('seed')})")
    if len(clean.records) != len(attacked.records):
        raise DataError("paired runs differ in round count")
    w = attacked.config.get("window_fraction", 0.1)
    bda, bdv = paired_degradation(clean.acc, attacked.acc, w)
    attacked.summary.bda, attacked.summary.bdv = bda, bdv
    return {"bda": bda, "bdv": bdv, "seed": clean.config.get("seed"), "version": __version__}


def run_paired(cfg: ExperimentConfig, out_dir: Optional[str] = None, force: bool = False,
               workers: int = 1, clean: Optional[RunArtifact] = None, persist: bool = True):
    """Clean and attacked runs under the same seed; returns (clean, attacked, degradation)."""
    if cfg.attack is None:
        raise ConfigError("attack: a paired run needs an attack section")
    directory = _run_dir(cfg, out_dir)
    if persist and os.path.exists(os.path.join(directory, "pair.json")) and not force:
        raise RunExistsError(f"{directory}: paired run already exists (use --force to overwrite)")
    if clean is None:
        clean = execute(cfg, attack_enabled=False, workers=workers)
    attacked = execute(cfg, attack_enabled=True, workers=workers)
    degr = pair_runs(clean, attacked)
    if persist:
        if clean.path is None:
            write_logs(clean, os.path.join(directory, "clean"), force=force)
        write_logs(attacked, os.path.join(directory, "attacked"), force=force)
        with open(os.path.join(directory, "pair.json"), "w") as fh:
            fh.write(_dump(degr))
    return clean, attacked, degr


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _ratio_tag(ratio: float) -> str:
    return f"r{round(ratio * 100, 6):g}"


def _row(setting: str, ratio: float, attack: str, s: MetricsSummary) -> dict:
    bsa, bsv = (s.bsa, s.bsv) if s.bsa is not None else (s.edge_bsa, s.edge_bsv)
    return {"setting": setting, "ratio": ratio, "attack": attack,
            "acc_mean": s.acc_mean, "acc_std": s.acc_std, "bsa": bsa, "bsv": bsv,
            "bda": s.bda, "bdv": s.bdv,
            "window_start": s.window_start, "window_end": s.window_end}


def _clean_for_setting(cfg: ExperimentConfig, directory: str, force: bool) -> RunArtifact:
    # honest training ignores which clients are marked malicious, so one clean
    # run serves every ratio of a setting
    path = os.path.join(directory, "clean")
    if os.path.exists(os.path.join(path, "rounds.jsonl")) and not force:
        return read_run(path)
    art = execute(cfg.replace(malicious_ratio=0.0), attack_enabled=False)
    write_logs(art, path, force=force)
    return art


def _sweep_cell(cfg_dict: dict, clean_dir: str, cell_dir: str, force: bool) -> str:
    cfg = config_from_dict(cfg_dict)
    clean = read_run(clean_dir)
    attacked = execute(cfg, attack_enabled=True, clean_records=clean.records)
    pair_runs(clean, attacked)
    # only unfinished cells are queued, so a partial log left by an
    # interrupted sweep is overwritten
    write_logs(attacked, cell_dir, force=True)
    return cell_dir


def run_sweep(cfg: ExperimentConfig, ratios: Sequence[float], settings: Sequence[str],
              out_dir: Optional[str] = None, force: bool = False, processes: int = 1) -> list:
    """Cartesian product settings x ratios, one paired cell each.

    Cells whose summary already exists are skipped unless ``force``, so an
    interrupted sweep resumes where it stopped.
    """
    if cfg.attack is None:
        raise ConfigError("attack: a sweep needs an attack section")
    for r in ratios:
        if not 0.0 <= r <= 1.0:
            raise ConfigError(f"ratios: {r} is not a fraction in [0, 1]")
    directory = _run_dir(cfg, out_dir)
    jobs = []
    for setting in settings:
        scfg = cfg.replace(preset=setting)
        sdir = os.path.join(directory, setting)
        _clean_for_setting(scfg, sdir, force)
        for ratio in ratios:
            cell = os.path.join(sdir, _ratio_tag(ratio))
            if os.path.exists(os.path.join(cell, "summary.json")) and not force:
                log.info("skipping completed cell %s", cell)
                continue
            ccfg = scfg.replace(malicious_ratio=float(ratio))
            jobs.append((config_to_dict(ccfg), os.path.join(sdir, "clean"), cell, force))
    if processes > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(processes) as ex:
            list(ex.map(_sweep_cell, *zip(*jobs)))
    else:
        for job in jobs:
            _sweep_cell(*job)

    table = []
    for setting in settings:
        for ratio in ratios:
            art = read_run(os.path.join(directory, setting, _ratio_tag(ratio)))
            table.append(_row(setting, float(ratio), cfg.attack.kind, art.summary))
    with open(os.path.join(directory, "sweep.json"), "w") as fh:
        fh.write(_dump({"rows": table, "version": __version__}))
    with open(os.path.join(directory, "sweep.csv"), "w", newline="") as fh:
        fh.write(sweep_table_csv(table))
    return table


def sweep_table_csv(table) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in table:
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in SWEEP_FIELDS})
    return buf.getvalue()
