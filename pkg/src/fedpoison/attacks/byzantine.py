"""Untargeted (byzantine) crafting ops.

Statistics that the classic versions of these attacks take from benign
clients are estimated here from the colluders' own benign-computed updates
(``AttackContext.references()``).
"""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.stats import norm as _normal

from ..aggregation import krum_select
from ..data import flip_labels
from ..errors import ConfigError
from .base import AttackContext, PostconditionError, checks_enabled

log = logging.getLogger(__name__)

__all__ = [
    "craft_noise",
    "craft_signflip",
    "craft_updateflip",
    "craft_labelflip",
    "craft_ipm",
    "craft_lie",
    "lie_z",
    "minmax_search",
    "craft_minmax",
    "fang_search",
    "craft_fang",
    "craft_median_tailored",
    "craft_signguard_attack",
]


def craft_noise(ctx: AttackContext, mu: float = 0.0, sigma: float = 0.1) -> np.ndarray:
    if sigma < 0:
        raise ConfigError("noise sigma must be >= 0")
    return ctx.rng.normal(mu, sigma, size=ctx.own_update.size) if sigma > 0 \
        else np.full(ctx.own_update.size, float(mu))


def craft_signflip(ctx: AttackContext) -> np.ndarray:
    """Local SGD that ascends: every batch gradient is negated before the step."""
    return ctx.trainer(grad_transform=np.negative)


def craft_updateflip(ctx: AttackContext) -> np.ndarray:
    return -ctx.own_update


def craft_labelflip(ctx: AttackContext, mode: str = "targeted", target: int = 0,
                    source=None) -> np.ndarray:
    y = flip_labels(ctx.trainer.y, ctx.trainer.num_classes, mode, target, source,
                    seed=int(ctx.rng.integers(2**31)))
    return ctx.trainer(y=y)


def craft_ipm(ctx: AttackContext, epsilon: float = 1.0) -> np.ndarray:
    if not ctx.colluder_updates:
        log.info("ipm: no colluder updates, using own benign update as the estimate")
    mean = ctx.references().mean(axis=0)
    out = -epsilon * mean
    if checks_enabled() and epsilon > 0 and np.any(mean):
        if not np.dot(out, mean) < 0:
            raise PostconditionError("ipm output does not oppose the reference mean")
    return out


def lie_z(n: int, m: int) -> float:
    """z_max from the original LIE analysis for n participants, m malicious."""
    s = math.floor(n / 2 + 1) - m
    q = (n - s) / n
    q = min(max(q, 1e-6), 1 - 1e-6)
    return float(_normal.ppf(q))


def craft_lie(ctx: AttackContext, z="auto") -> np.ndarray:
    """mu - z * sigma, coordinate-wise over the colluders' benign updates."""
    refs = ctx.references()
    mu = refs.mean(axis=0)
    sd = refs.std(axis=0, ddof=1) if refs.shape[0] >= 2 else np.zeros_like(mu)
    if z == "auto":
        z = lie_z(ctx.num_selected, max(ctx.m, 1))
    return mu - float(z) * sd


def _max_dist(x, refs):
    return float(np.sqrt(((refs - x) ** 2).sum(axis=1)).max())


def minmax_search(refs, iters: int = 50):
    """Largest gamma with max_i ||mu + gamma*p - u_i|| <= max_ij ||u_i - u_j||.

    Returns (gamma, bound, mu, p) with p = -mu / ||mu||.
    """
    refs = np.asarray(refs, dtype=np.float64)
    mu = refs.mean(axis=0)
    nmu = np.linalg.norm(mu)
    p = -mu / nmu if nmu > 0 else np.zeros_like(mu)
    if refs.shape[0] < 2 or nmu == 0:
        return 0.0, 0.0, mu, p
    diffs = refs[:, None, :] - refs[None, :, :]
    bound = float(np.sqrt((diffs ** 2).sum(axis=2)).max())
    radius = float(np.sqrt(((refs - mu) ** 2).sum(axis=1)).max())
    lo, hi = 0.0, 10.0 * radius
    if hi == 0.0:
        return 0.0, bound, mu, p
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _max_dist(mu + mid * p, refs) <= bound:
            lo = mid
        else:
            hi = mid
    return lo, bound, mu, p


def craft_minmax(ctx: AttackContext, iters: int = 50) -> np.ndarray:
    refs = ctx.references()
    gamma, bound, mu, p = minmax_search(refs, iters)
    out = mu + gamma * p
    if checks_enabled() and refs.shape[0] >= 2 and gamma > 0:
        if _max_dist(out, refs) > bound:
            raise PostconditionError("minmax output violates the distance bound")
        if _max_dist(mu + 1.01 * gamma * p, refs) <= bound:
            raise PostconditionError("minmax gamma is not maximal within 1%")
    return out


def fang_search(refs, m: int, f: int, max_halvings: int = 30):
    """Halve lambda from 1 until Krum over refs + m copies of -lambda*sign(mean) picks a copy.

    Returns (candidate or None, lambda or None).
    """
    refs = np.asarray(refs, dtype=np.float64)
    s = np.sign(refs.mean(axis=0))
    lam = 1.0
    for _ in range(max_halvings + 1):
        cand = -lam * s
        pool = list(refs) + [cand] * m
        if krum_select(pool, f) >= refs.shape[0]:
            return cand, lam
        lam *= 0.5
    return None, None


def craft_fang(ctx: AttackContext, krum_f: int = 1, max_halvings: int = 30) -> np.ndarray:
    refs = list(ctx.references())
    m = max(ctx.m, 1)
    need = 2 * krum_f + 3 - m
    if len(refs) < need:
        log.info("fang: padding %d references with own-update clones", need - len(refs))
        refs += [ctx.own_update.copy()] * (need - len(refs))
    refs = np.stack(refs)
    cand, lam = fang_search(refs, m, krum_f, max_halvings)
    if cand is None:
        log.info("fang: no lambda selected by krum, falling back to updateflip")
        ctx.notes["fang_fallback"] = True
        return -ctx.own_update
    if checks_enabled():
        pool = list(refs) + [cand] * m
        if krum_select(pool, krum_f) < refs.shape[0]:
            raise PostconditionError("krum oracle did not select the fang candidate")
    ctx.notes["fang_lambda"] = lam
    return cand


def craft_median_tailored(ctx: AttackContext) -> np.ndarray:
    """Per coordinate, the benign extreme on the side opposite the reference mean."""
    refs = ctx.references()
    mu = refs.mean(axis=0)
    direction = -np.sign(mu)
    out = np.where(direction < 0, refs.min(axis=0), refs.max(axis=0))
    if checks_enabled():
        if np.any(out < refs.min(axis=0)) or np.any(out > refs.max(axis=0)):
            raise PostconditionError("median-tailored output left the benign range")
    return out


def craft_signguard_attack(ctx: AttackContext, flip_fraction: float = 0.3,
                           magnitude_boost: float = 1.0) -> np.ndarray:
    """Flip the signs of a random subset of the smallest-magnitude coordinates.

    ``flip_fraction * d`` coordinates are drawn uniformly from the
    ``min(1, 2*flip_fraction) * d`` smallest-magnitude ones, multiplied by
    ``-magnitude_boost``, and the result is rescaled to the benign L2 norm.
    """
    if not 0.0 <= flip_fraction <= 1.0:
        raise ConfigError("flip_fraction must be in [0, 1]")
    u = ctx.own_update
    d = u.size
    k = int(round(flip_fraction * d))
    out = u.copy()
    if k > 0:
        pool_size = max(k, min(d, int(round(min(1.0, 2 * flip_fraction) * d))))
        smallest = np.argsort(np.abs(u), kind="stable")[:pool_size]
        chosen = ctx.rng.choice(smallest, size=k, replace=False)
        out[chosen] *= -magnitude_boost
    n_in, n_out = np.linalg.norm(u), np.linalg.norm(out)
    if n_out > 0:
        out *= n_in / n_out
    if checks_enabled() and abs(np.linalg.norm(out) - n_in) > 1e-9 * max(1.0, n_in):
        raise PostconditionError("signguard output norm differs from benign norm")
    return out
