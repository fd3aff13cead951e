"""Experiment configuration: JSON schema, defaults, presets.

Defaults follow the benchmark protocol: 100 clients, join ratio 0.1, batch
size 64, 5 local epochs, the ``practical`` heterogeneity preset, plain
FedAvg, a 10% evaluation hold-out and a last-10%-of-rounds metric window.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Optional

from .attacks.base import ConstraintSpec
from .attacks.registry import ATTACK_KINDS, ATTACK_PARAMS, BACKDOOR_KINDS, AttackSpec
from .data import PoisonTransform
from .errors import ConfigError
from .heterogeneity import HeterogeneityConfig

__all__ = [
    "PRESETS",
    "DatasetSpec",
    "ModelSpec",
    "FLConfig",
    "TrainSpec",
    "PartitionSpec",
    "TriggerSpec",
    "AttackConfig",
    "ExperimentConfig",
    "parse_config",
    "config_from_dict",
    "config_to_dict",
    "malicious_count",
]

PRESETS = {
    "practical": {"dirichlet": 0.9, "device": 0.9, "comm": 0.9},
    "ideal": {"dirichlet": math.inf, "device": 1.0, "comm": 1.0},
}


@dataclass
class DatasetSpec:
    kind: str = "blobs"                # blobs | grid | csv
    num_classes: int = 10
    dim: int = 16                      # blobs
    n_per_class: int = 1500            # 10 x 1500 fills 100 shards of 2*64 rows
    spread: float = 1.0                # blobs
    center_scale: float = 3.0          # blobs
    height: int = 8                    # grid
    width: int = 8                     # grid
    noise: float = 0.3                 # grid
    path: Optional[str] = None         # csv
    label_column: Any = -1             # csv: name or index
    header: bool = True                # csv
    seed: Optional[int] = None         # defaults to the experiment seed

    def validate(self, where="dataset"):
        if self.kind not in ("blobs", "grid", "csv"):
            raise ConfigError(f"{where}.kind: expected one of blobs, grid, csv; got {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ConfigError(f"{where}.path: required for csv datasets")


@dataclass
class ModelSpec:
    hidden: list = field(default_factory=lambda: [32])

    def validate(self, where="model"):
        if any((not isinstance(h, int)) or h <= 0 for h in self.hidden):
            raise ConfigError(f"{where}.hidden: expected positive integers, got {self.hidden}")


@dataclass
class FLConfig:
    num_clients: int = 100
    join_ratio: float = 0.1
    rounds: int = 100
    aggregator: str = "fedavg"          # fedavg | krum | median | trimmed_mean
    krum_f: int = 1
    trim_beta: float = 0.1

    @property
    def clients_per_round(self) -> int:
        return int(math.floor(round(self.join_ratio * self.num_clients, 9)))

    def validate(self, where="fl"):
        if self.num_clients < 1:
            raise ConfigError(f"{where}.num_clients: must be >= 1")
        if not 0.0 < self.join_ratio <= 1.0:
            raise ConfigError(f"{where}.join_ratio: must be in (0, 1]")
        if not 1 <= self.clients_per_round <= self.num_clients:
            raise ConfigError(f"{where}.join_ratio: floor(join_ratio * num_clients) must be >= 1")
        if self.rounds < 1:
            raise ConfigError(f"{where}.rounds: must be >= 1")
        if self.aggregator not in ("fedavg", "krum", "median", "trimmed_mean"):
            raise ConfigError(f"{where}.aggregator: expected fedavg, krum, median or trimmed_mean")
        K = self.clients_per_round
        if self.aggregator == "krum" and K < 2 * self.krum_f + 3:
            raise ConfigError(f"{where}.krum_f: krum(f={self.krum_f}) needs >= {2 * self.krum_f + 3} clients per round, have {K}")
        if self.aggregator == "trimmed_mean" and not K > 2 * math.ceil(round(self.trim_beta * K, 9)):
            raise ConfigError(f"{where}.trim_beta: cannot trim {K} clients per round with beta={self.trim_beta}")


@dataclass
class TrainSpec:
    learning_rate: float = 0.01
    batch_size: int = 64
    local_epochs: int = 5
    scale_epochs_by_data: bool = False

    def validate(self, where="train"):
        if not self.learning_rate > 0:
            raise ConfigError(f"{where}.learning_rate: must be > 0")
        if self.batch_size < 1:
            raise ConfigError(f"{where}.batch_size: must be >= 1")
        if self.local_epochs < 1:
            raise ConfigError(f"{where}.local_epochs: must be >= 1")


@dataclass
class PartitionSpec:
    test_fraction: float = 0.1
    min_shard: Optional[int] = None     # defaults to 2 * batch_size

    def validate(self, where="partition"):
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"{where}.test_fraction: must be in (0, 1)")
        if self.min_shard is not None and self.min_shard < 2:
            raise ConfigError(f"{where}.min_shard: must be >= 2")


@dataclass
class TriggerSpec:
    size: int = 3                       # square patch edge (grid) or feature count (flat)
    cells: Optional[list] = None        # explicit [[row, col], ...] or [index, ...]
    value: float = 1.0
    target: int = 0
    fraction: float = 0.5
    corner: str = "bottom_right"        # grid patches: bottom_right | top_left

    def validate(self, where="attack.trigger"):
        if self.size < 1:
            raise ConfigError(f"{where}.size: must be >= 1")
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigError(f"{where}.fraction: must be in [0, 1]")
        if self.corner not in ("bottom_right", "top_left"):
            raise ConfigError(f"{where}.corner: expected bottom_right or top_left")

    def build(self, feature_kind: str, grid_shape, dim: int) -> PoisonTransform:
        if feature_kind == "grid":
            h, w = grid_shape
            if self.cells is not None:
                cells = [tuple(c) for c in self.cells]
            else:
                s = self.size
                r0, c0 = (h - s, w - s) if self.corner == "bottom_right" else (0, 0)
                cells = [(r0 + i, c0 + j) for i in range(s) for j in range(s)]
            return PoisonTransform("trigger_patch", tuple(cells), self.value, self.target,
                                   self.fraction, tuple(grid_shape))
        cells = list(self.cells) if self.cells is not None else list(range(min(self.size, dim)))
        return PoisonTransform("feature_set", tuple(cells), self.value, self.target, self.fraction)


@dataclass
class AttackConfig:
    kind: str = "updateflip"
    params: dict = field(default_factory=dict)
    scale: float = 1.0
    norm_cap: Optional[float] = None
    trigger: TriggerSpec = field(default_factory=TriggerSpec)

    def validate(self, where="attack"):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"{where}.kind: unknown attack kind {self.kind!r}; valid kinds: {', '.join(ATTACK_KINDS)}")
        unknown = sorted(set(self.params) - set(ATTACK_PARAMS[self.kind]))
        if unknown:
            raise ConfigError(f"{where}.params: unknown key(s) {unknown} for {self.kind!r}; "
                              f"valid: {sorted(ATTACK_PARAMS[self.kind])}")
        if not self.scale > 0:
            raise ConfigError(f"{where}.scale: must be > 0")
        if self.norm_cap is not None and not self.norm_cap > 0:
            raise ConfigError(f"{where}.norm_cap: must be > 0")
        self.trigger.validate(f"{where}.trigger")

    def spec(self, feature_kind: str, grid_shape, dim: int) -> AttackSpec:
        trig = None
        if self.kind in BACKDOOR_KINDS and self.kind != "edgecase":
            trig = self.trigger.build(feature_kind, grid_shape, dim)
        return AttackSpec(self.kind, dict(self.params), ConstraintSpec(self.scale, self.norm_cap), trig)


@dataclass
class ExperimentConfig:
    dataset: DatasetSpec
    name: str = "experiment"
    seed: int = 0
    preset: Optional[str] = "practical"
    model: ModelSpec = field(default_factory=ModelSpec)
    fl: FLConfig = field(default_factory=FLConfig)
    train: TrainSpec = field(default_factory=TrainSpec)
    heterogeneity: dict = field(default_factory=dict)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    attack: Optional[AttackConfig] = None
    malicious_ratio: float = 0.0
    allow_weight_scaling: bool = False
    window_fraction: float = 0.1
    output_dir: Optional[str] = None

    def het(self) -> HeterogeneityConfig:
        base = dict(PRESETS["practical"] if self.preset is None else PRESETS[self.preset])
        base.update(self.heterogeneity)
        return HeterogeneityConfig(_as_float(base["dirichlet"]), float(base["device"]), float(base["comm"]))

    @property
    def min_shard(self) -> int:
        return self.partition.min_shard if self.partition.min_shard is not None else 2 * self.train.batch_size

    def validate(self):
        if self.seed < 0:
            raise ConfigError("seed: must be non-negative")
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"preset: expected one of {sorted(PRESETS)}, got {self.preset!r}")
        unknown = sorted(set(self.heterogeneity) - {"dirichlet", "device", "comm"})
        if unknown:
            raise ConfigError(f"heterogeneity: unknown key(s) {unknown}")
        try:
            self.het()
        except ConfigError as e:
            raise ConfigError(f"heterogeneity: {e}") from None
        self.dataset.validate()
        self.model.validate()
        self.fl.validate()
        self.train.validate()
        self.partition.validate()
        if not 0.0 <= self.malicious_ratio <= 1.0:
            raise ConfigError("malicious_ratio: must be in [0, 1]")
        if self.attack is not None:
            self.attack.validate()
            if self.attack.scale != 1.0 and not self.allow_weight_scaling:
                raise ConfigError("attack.scale: weight scaling needs allow_weight_scaling: true")
        elif self.malicious_ratio > 0:
            raise ConfigError("malicious_ratio: > 0 requires an attack section")
        if not 0.0 < self.window_fraction <= 1.0:
            raise ConfigError("window_fraction: must be in (0, 1]")
        return self

    def replace(self, **changes) -> "ExperimentConfig":
        return config_from_dict({**config_to_dict(self), **changes})


def malicious_count(ratio: float, N: int) -> int:
    return int(math.floor(round(ratio * N, 9)))


def _as_float(v):
    if isinstance(v, str):
        if v.lower() in ("inf", "infinity"):
            return math.inf
        raise ConfigError(f"expected a number or 'inf', got {v!r}")
    return float(v)


# ---------------------------------------------------------------------------
# dict <-> dataclass
# ---------------------------------------------------------------------------

_NESTED = {
    "dataset": DatasetSpec,
    "model": ModelSpec,
    "fl": FLConfig,
    "train": TrainSpec,
    "partition": PartitionSpec,
    "attack": AttackConfig,
}


def _build(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"{path}.{unknown[0]}: unknown key" if path else f"{unknown[0]}: unknown key")
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if cls is AttackConfig and key == "trigger":
            value = _build(TriggerSpec, value, sub)
        elif cls is ExperimentConfig and key in _NESTED and value is not None:
            value = _build(_NESTED[key], value, sub)
        else:
            value = _coerce(names[key], value, sub)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(f"{path or 'config'}: {e}") from None


def _coerce(f, value, path):
    default = f.default if f.default is not dataclasses.MISSING else None
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
    elif isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        value = float(value)
    elif isinstance(default, str) and f.name != "label_column":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def config_from_dict(data: dict) -> ExperimentConfig:
    data = copy.deepcopy(data)
    if "dataset" not in data:
        raise ConfigError("dataset: required key missing")
    cfg = _build(ExperimentConfig, data, "")
    return cfg.validate()


def _jsonable(v):
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return _jsonable(dataclasses.asdict(cfg))


def parse_config(path) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"{path}: no such config file")
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return config_from_dict(data)
