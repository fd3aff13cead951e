"""Server-side aggregation rules over client updates."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .nn import ModelParams

log = logging.getLogger(__name__)

__all__ = [
    "UpdateVector",
    "fedavg_weights",
    "aggregate_fedavg",
    "krum_scores",
    "krum_select",
    "coordinate_median",
    "trimmed_mean",
    "robust_aggregate",
    "check_robust_preconditions",
]


@dataclass(frozen=True)
class UpdateVector:
    """A client's submitted delta.

    ``local_params`` is the client's final local model when the delta came
    straight out of honest training; FedAvg then averages models directly,
    which keeps a single-survivor round bit-exact with local SGD.
    """

    client_id: int
    delta: np.ndarray
    sample_count: int
    local_params: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.sample_count < 1:
            raise ShapeError("sample_count must be >= 1")

    def replaced(self, delta) -> "UpdateVector":
        return UpdateVector(self.client_id, np.asarray(delta, dtype=np.float64), self.sample_count)


def fedavg_weights(updates) -> np.ndarray:
    counts = np.array([u.sample_count for u in updates], dtype=np.float64)
    return counts / counts.sum()


def _ordered(updates):
    return sorted(updates, key=lambda u: u.client_id)


def aggregate_fedavg(global_params: ModelParams, updates):
    """Sample-weighted average over survivors, reduced in ascending client id.

    Returns (new params, weights in client-id order). An empty survivor set
    leaves the model unchanged.
    """
    if not updates:
        log.info("empty round: no surviving updates, global model unchanged")
        return global_params, np.empty(0)
    ups = _ordered(updates)
    w = fedavg_weights(ups)
    acc = np.zeros_like(global_params.flat)
    for wi, u in zip(w, ups):
        if u.delta.shape != acc.shape:
            raise ShapeError(f"update from client {u.client_id} has wrong length")
        local = u.local_params if u.local_params is not None else global_params.flat + u.delta
        acc = acc + wi * local
    return global_params.with_flat(acc), w


def _stack(updates) -> np.ndarray:
    return np.stack([u.delta if isinstance(u, UpdateVector) else np.asarray(u, dtype=np.float64)
                     for u in updates])


def krum_scores(vectors, f: int) -> np.ndarray:
    """Sum of squared distances to the ``count - f - 2`` nearest other vectors."""
    V = _stack(vectors)
    n = V.shape[0]
    k = n - f - 2
    if k < 1:
        raise ConfigError(f"krum needs count >= f + 3 (count={n}, f={f})")
    D = np.empty((n, n))
    for i in range(n):
        D[i] = ((V - V[i]) ** 2).sum(axis=1)
    np.fill_diagonal(D, np.inf)
    return np.sort(D, axis=1)[:, :k].sum(axis=1)


def krum_select(vectors, f: int) -> int:
    """Index of the Krum winner (lowest score; ties go to the lowest index)."""
    return int(np.argmin(krum_scores(vectors, f)))


def coordinate_median(vectors) -> np.ndarray:
    return np.median(_stack(vectors), axis=0)


def trimmed_mean(vectors, beta: float) -> np.ndarray:
    V = np.sort(_stack(vectors), axis=0)
    n = V.shape[0]
    b = math.ceil(round(beta * n, 9))
    if not n > 2 * b:
        raise ConfigError(f"trimmed_mean(beta={beta}) needs count > 2*ceil(beta*count) (count={n})")
    return V[b:n - b].mean(axis=0)


def check_robust_preconditions(method: str, count: int, krum_f: int = 1, trim_beta: float = 0.1):
    if method == "krum" and count < 2 * krum_f + 3:
        raise ConfigError(f"krum(f={krum_f}) needs >= {2 * krum_f + 3} updates, got {count}")
    if method == "trimmed_mean" and not count > 2 * math.ceil(round(trim_beta * count, 9)):
        raise ConfigError(f"trimmed_mean(beta={trim_beta}) cannot trim {count} updates")
    if method not in ("krum", "median", "trimmed_mean"):
        raise ConfigError(f"unknown robust method {method!r}")


def robust_aggregate(global_params: ModelParams, updates, method: str, krum_f: int = 1,
                     trim_beta: float = 0.1) -> ModelParams:
    """Unweighted robust rule applied to deltas; result added to the global model."""
    if not updates:
        log.info("empty round: no surviving updates, global model unchanged")
        return global_params
    ups = _ordered(updates)
    check_robust_preconditions(method, len(ups), krum_f, trim_beta)
    if method == "krum":
        agg = ups[krum_select(ups, krum_f)].delta
    elif method == "median":
        agg = coordinate_median(ups)
    else:
        agg = trimmed_mean(ups, trim_beta)
    return global_params.with_flat(global_params.flat + agg)
