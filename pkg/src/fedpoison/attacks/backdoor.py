"""Targeted (backdoor) crafting ops built on poisoned local training."""

from __future__ import annotations

import math

import numpy as np

from ..data import EdgeCasePool, PoisonTransform, stamp_batch
from ..errors import ConfigError
from ..nn import input_grad
from .base import AttackContext, PostconditionError, checks_enabled

__all__ = [
    "poison_epoch_hook",
    "backdoor_local_train",
    "craft_replace",
    "dba_assign",
    "top_k_mask",
    "craft_neurotoxin",
    "craft_edgecase",
    "optimize_trigger",
    "craft_trigger_opt",
]


def poison_epoch_hook(transform: PoisonTransform, rng: np.random.Generator):
    """Per-epoch substitution stamping ceil(fraction * n) random rows with the trigger."""
    def hook(epoch, X, y):
        n = X.shape[0]
        k = min(n, math.ceil(round(transform.fraction * n, 9)))
        if k == 0:
            return X, y
        idx = rng.choice(n, size=k, replace=False)
        Xe = X.copy()
        ye = y.copy()
        Xe[idx] = stamp_batch(X[idx], transform)
        ye[idx] = transform.target
        return Xe, ye
    return hook


def backdoor_local_train(ctx: AttackContext, transform: PoisonTransform) -> np.ndarray:
    """Local training where each epoch a fraction of the shard carries the trigger."""
    return ctx.trainer(epoch_data=poison_epoch_hook(transform, ctx.rng))


def craft_replace(ctx: AttackContext, transform: PoisonTransform, scale=None) -> np.ndarray:
    """Backdoor delta scaled by ``scale`` (default: number of selected clients)."""
    beta = float(ctx.num_selected if scale is None else scale)
    return beta * backdoor_local_train(ctx, transform)


def dba_assign(transform: PoisonTransform, n_parts: int) -> list:
    """Split a grid trigger into disjoint local triggers.

    4 parts are the quadrants of the trigger's bounding box (row-major order),
    2 parts its left and right halves, 1 part the trigger itself.
    """
    if n_parts == 1:
        return [transform]
    if n_parts not in (2, 4):
        raise ConfigError("dba n_parts must be 1, 2 or 4")
    if transform.kind != "trigger_patch":
        raise ConfigError("dba needs a grid (trigger_patch) trigger")
    rows = [r for r, _ in transform.coords]
    cols = [c for _, c in transform.coords]
    r_mid = (min(rows) + max(rows) + 1) / 2.0
    c_mid = (min(cols) + max(cols) + 1) / 2.0

    def part(cell):
        r, c = cell
        right = int(c + 0.5 >= c_mid)
        if n_parts == 2:
            return right
        return 2 * int(r + 0.5 >= r_mid) + right

    groups = [[] for _ in range(n_parts)]
    for cell in transform.coords:
        groups[part(cell)].append(cell)
    return [transform.with_coords(g) for g in groups]


def top_k_mask(vec, fraction: float) -> np.ndarray:
    """Boolean mask of the round(fraction*d) largest-|.| coordinates (ties by index)."""
    v = np.abs(np.asarray(vec))
    k = int(round(fraction * v.size))
    mask = np.zeros(v.size, dtype=bool)
    if k > 0:
        mask[np.argsort(-v, kind="stable")[:k]] = True
    return mask


def craft_neurotoxin(ctx: AttackContext, transform: PoisonTransform,
                     top_k_fraction: float = 0.1) -> np.ndarray:
    """Backdoor delta restricted to coordinates the global model rarely moves."""
    if not 0.0 <= top_k_fraction <= 1.0:
        raise ConfigError("top_k_fraction must be in [0, 1]")
    delta = backdoor_local_train(ctx, transform)
    delta[top_k_mask(ctx.prev_global_delta, top_k_fraction)] = 0.0
    return delta


def craft_edgecase(ctx: AttackContext, pool: EdgeCasePool, train_rows: np.ndarray,
                   mix_fraction: float = 0.5) -> np.ndarray:
    """Train on the shard plus a sample of edge-case rows relabelled to the target."""
    if not 0.0 <= mix_fraction <= 1.0:
        raise ConfigError("mix_fraction must be in [0, 1]")
    k = math.ceil(round(mix_fraction * len(train_rows), 9))
    ctx.notes["edge_samples"] = int(k)
    if k == 0:
        return ctx.trainer()
    pick = ctx.rng.choice(train_rows, size=k, replace=False)
    X = np.concatenate([ctx.trainer.X, pool.features[pick]])
    y = np.concatenate([ctx.trainer.y, pool.labels[pick]])
    return ctx.trainer(X=X, y=y)


def optimize_trigger(params, X, transform: PoisonTransform, steps: int, lr: float,
                     max_abs: float = 3.0, max_backtracks: int = 10):
    """Gradient descent on the trigger values (cells fixed) to minimise backdoor loss.

    Uses a fixed batch ``X`` and backtracking so the loss sequence never
    increases. Returns (new transform, loss history).
    """
    idx = transform.flat_indices(X.shape[1])
    y = np.full(X.shape[0], transform.target)
    vals = np.asarray(transform.values, dtype=np.float64)

    def loss_at(v):
        return input_grad(params, stamp_batch(X, transform.with_values(v)), y)

    loss, dX = loss_at(vals)
    history = [loss]
    for _ in range(steps):
        g = dX[:, idx].sum(axis=0)
        step = lr
        for _ in range(max_backtracks):
            cand = np.clip(vals - step * g, -max_abs, max_abs)
            c_loss, c_dX = loss_at(cand)
            if c_loss <= loss:
                vals, loss, dX = cand, c_loss, c_dX
                break
            step *= 0.5
        history.append(loss)
    if checks_enabled() and any(b > a for a, b in zip(history, history[1:])):
        raise PostconditionError("trigger optimisation increased the loss")
    return transform.with_values(vals), history


def craft_trigger_opt(ctx: AttackContext, transform: PoisonTransform, opt_steps: int = 10,
                      opt_lr: float = 0.1, max_abs: float = 3.0, batch: int = 256) -> np.ndarray:
    """Backdoor training with a trigger optimised against the current global model.

    The first colluder to run in a round optimises on its own non-target rows
    and leaves the result in ``ctx.shared``; the others reuse it.
    """
    if "trigger" not in ctx.shared:
        X, y = ctx.trainer.X, ctx.trainer.y
        rows = X[y != transform.target]
        if rows.shape[0] == 0:
            rows = X
        trig, history = optimize_trigger(ctx.global_params, rows[:batch], transform,
                                         opt_steps, opt_lr, max_abs)
        ctx.shared["trigger"] = trig
        ctx.shared["trigger_loss"] = history
        ctx.notes["trigger_loss"] = [history[0], history[-1]]
    return backdoor_local_train(ctx, ctx.shared["trigger"])
