"""Attacker context, update constraint, and postcondition checking switch."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import ConfigError
from ..nn import ModelParams

__all__ = [
    "AttackContext",
    "ConstraintSpec",
    "apply_constraint",
    "set_checks",
    "checks_enabled",
    "PostconditionError",
]

_CHECKS = os.environ.get("FEDPOISON_CHECKS", "0") == "1"


class PostconditionError(AssertionError):
    pass


def set_checks(enabled: bool) -> None:
    """Turn on per-call postcondition assertions in the crafting ops (test mode)."""
    global _CHECKS
    _CHECKS = bool(enabled)


def checks_enabled() -> bool:
    return _CHECKS


@dataclass
class AttackContext:
    """Everything a malicious client may use when crafting its update.

    ``colluder_updates`` maps malicious client id -> benign-computed delta for
    the malicious clients selected this round (including this one). Benign
    clients' updates never appear here.
    """

    client_id: int
    round_t: int
    global_params: ModelParams
    own_update: np.ndarray
    colluder_updates: dict
    prev_global_delta: np.ndarray
    rng: np.random.Generator
    num_selected: int = 1
    sample_count: int = 1
    attack_rank: int = 0
    trainer: Optional[Callable] = None
    shared: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.colluder_updates)

    def references(self) -> np.ndarray:
        """Colluder benign-computed updates stacked in client-id order."""
        if not self.colluder_updates:
            return self.own_update[None, :].copy()
        return np.stack([self.colluder_updates[k] for k in sorted(self.colluder_updates)])


@dataclass(frozen=True)
class ConstraintSpec:
    scale: float = 1.0
    norm_cap: Optional[float] = None

    def __post_init__(self):
        if not self.scale > 0:
            raise ConfigError("constraint scale must be > 0")
        if self.norm_cap is not None and not self.norm_cap > 0:
            raise ConfigError("norm_cap must be > 0")


def apply_constraint(delta, spec: ConstraintSpec) -> np.ndarray:
    """Scale, then project onto the L2 ball of radius ``norm_cap``."""
    out = spec.scale * np.asarray(delta, dtype=np.float64)
    if spec.norm_cap is not None:
        norm = np.linalg.norm(out)
        if norm > spec.norm_cap:
            out = out * (spec.norm_cap / norm)
            # guard the last-ulp overshoot
            while np.linalg.norm(out) > spec.norm_cap:
                out = out * (1.0 - 1e-15)
    if _CHECKS and spec.norm_cap is not None and np.linalg.norm(out) > spec.norm_cap:
        raise PostconditionError("constraint output exceeds norm cap")
    return out
