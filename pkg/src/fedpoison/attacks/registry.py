"""Attack catalog: parameter schemas, validation and per-run attack objects."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..data import EdgeCasePool, PoisonTransform
from ..errors import ConfigError
from . import backdoor as bd
from . import byzantine as bz
from .base import AttackContext, ConstraintSpec

log = logging.getLogger(__name__)

__all__ = [
    "BACKDOOR_KINDS",
    "BYZANTINE_KINDS",
    "ATTACK_KINDS",
    "ATTACK_PARAMS",
    "AttackSpec",
    "Attack",
    "build_attack",
]

BACKDOOR_KINDS = ("replace", "dba", "edgecase", "neurotoxin", "cerp", "a3fl")
BYZANTINE_KINDS = ("ipm", "noise", "fang", "labelflip", "signguard", "updateflip",
                   "minmax", "mediantailored", "signflip", "lie")
ATTACK_KINDS = BACKDOOR_KINDS + BYZANTINE_KINDS

# config key -> default, per kind
ATTACK_PARAMS = {
    "replace": {"scale": None},
    "dba": {"n_parts": 4},
    "edgecase": {"tail_fraction": 0.05, "mix_fraction": 0.5, "held_out_fraction": 0.5},
    "neurotoxin": {"top_k_fraction": 0.1},
    "cerp": {"opt_steps": 5, "opt_lr": 0.1, "max_abs": 3.0, "cap_to_colluder_norm": True},
    "a3fl": {"opt_steps": 20, "opt_lr": 0.1, "max_abs": 3.0},
    "ipm": {"epsilon": 1.0},
    "noise": {"mu": 0.0, "sigma": 0.1},
    "fang": {"krum_f": 1, "max_halvings": 30},
    "labelflip": {"mode": "targeted", "target": 0, "source": None},
    "signguard": {"flip_fraction": 0.3, "magnitude_boost": 1.0},
    "updateflip": {},
    "minmax": {"iters": 50},
    "mediantailored": {},
    "signflip": {},
    "lie": {"z": "auto"},
}


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    params: dict = field(default_factory=dict)
    constraint: ConstraintSpec = field(default_factory=ConstraintSpec)
    trigger: Optional[PoisonTransform] = None

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"unknown attack kind {self.kind!r}; valid kinds: {', '.join(ATTACK_KINDS)}")
        allowed = ATTACK_PARAMS[self.kind]
        unknown = sorted(set(self.params) - set(allowed))
        if unknown:
            raise ConfigError(
                f"attack.params: unknown key(s) {unknown} for {self.kind!r}; valid: {sorted(allowed)}")
        merged = dict(allowed)
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        if self.is_backdoor and self.kind != "edgecase" and self.trigger is None:
            raise ConfigError(f"attack {self.kind!r} needs a trigger")

    @property
    def is_backdoor(self) -> bool:
        return self.kind in BACKDOOR_KINDS


class Attack:
    """Stateful wrapper binding an AttackSpec to one simulation run."""

    def __init__(self, spec: AttackSpec, allow_weight_scaling: bool = False,
                 edge_pool: Optional[EdgeCasePool] = None, edge_train_rows=None,
                 edge_eval_rows=None):
        self.spec = spec
        self.kind = spec.kind
        self.params = spec.params
        self.allow_weight_scaling = allow_weight_scaling
        self.edge_pool = edge_pool
        self.edge_train_rows = edge_train_rows
        self.edge_eval_rows = edge_eval_rows
        self.trigger = spec.trigger
        self.constraint = spec.constraint
        if self.kind == "dba":
            self.sub_triggers = bd.dba_assign(spec.trigger, int(self.params["n_parts"]))
        if self.kind == "replace" and self.params["scale"] not in (None, 1, 1.0) \
                and not allow_weight_scaling:
            log.info("replace: weight scaling disabled by threat model, forcing scale=1")

    @property
    def is_backdoor(self) -> bool:
        return self.spec.is_backdoor

    def eval_transform(self) -> Optional[PoisonTransform]:
        """Trigger used to measure ASR (the full global trigger for DBA)."""
        if self.kind == "edgecase":
            return None
        return self.trigger

    def craft(self, ctx: AttackContext) -> np.ndarray:
        k, p = self.kind, self.params
        if k == "replace":
            scale = p["scale"] if self.allow_weight_scaling else 1.0
            return bd.craft_replace(ctx, self.trigger, scale)
        if k == "dba":
            return bd.backdoor_local_train(ctx, self.sub_triggers[ctx.attack_rank % len(self.sub_triggers)])
        if k == "edgecase":
            return bd.craft_edgecase(ctx, self.edge_pool, self.edge_train_rows, p["mix_fraction"])
        if k == "neurotoxin":
            return bd.craft_neurotoxin(ctx, self.trigger, p["top_k_fraction"])
        if k in ("cerp", "a3fl"):
            delta = bd.craft_trigger_opt(ctx, self.trigger, p["opt_steps"], p["opt_lr"], p["max_abs"])
            # the latest optimised trigger seeds the next round and is the one evaluated
            self.trigger = ctx.shared["trigger"]
            if k == "cerp" and p["cap_to_colluder_norm"]:
                cap = float(np.median(np.linalg.norm(ctx.references(), axis=1)))
                norm = np.linalg.norm(delta)
                if cap > 0 and norm > cap:
                    delta = delta * (cap / norm)
            return delta
        if k == "ipm":
            return bz.craft_ipm(ctx, p["epsilon"])
        if k == "noise":
            return bz.craft_noise(ctx, p["mu"], p["sigma"])
        if k == "fang":
            return bz.craft_fang(ctx, int(p["krum_f"]), int(p["max_halvings"]))
        if k == "labelflip":
            return bz.craft_labelflip(ctx, p["mode"], p["target"], p["source"])
        if k == "signguard":
            return bz.craft_signguard_attack(ctx, p["flip_fraction"], p["magnitude_boost"])
        if k == "updateflip":
            return bz.craft_updateflip(ctx)
        if k == "minmax":
            return bz.craft_minmax(ctx, int(p["iters"]))
        if k == "mediantailored":
            return bz.craft_median_tailored(ctx)
        if k == "signflip":
            return bz.craft_signflip(ctx)
        if k == "lie":
            return bz.craft_lie(ctx, p["z"])
        raise ConfigError(f"unknown attack kind {k!r}")


def build_attack(spec: AttackSpec, **kwargs) -> Attack:
    return Attack(spec, **kwargs)
