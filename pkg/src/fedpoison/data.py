"""Datasets, non-IID partitioning, train/test splits and poison transforms."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .rng import stream

log = logging.getLogger(__name__)

__all__ = [
    "DatasetMeta",
    "Dataset",
    "Shard",
    "PoisonTransform",
    "EdgeCasePool",
    "gen_blobs",
    "gen_grid",
    "load_csv",
    "dirichlet_partition",
    "split_train_test",
    "apply_trigger",
    "stamp_batch",
    "flip_labels",
    "edge_case_pool",
    "label_entropy",
]

INF = math.inf


@dataclass(frozen=True)
class DatasetMeta:
    num_classes: int
    feature_kind: str = "flat"  # "flat" or "grid"
    grid_shape: Optional[tuple] = None
    name: str = "dataset"


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    meta: DatasetMeta

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ShapeError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree"
            )
        C = self.meta.num_classes
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= C):
            raise DataError(f"labels must lie in [0, {C})")
        if self.meta.feature_kind == "grid":
            h, w = self.meta.grid_shape
            if h * w != self.features.shape[1]:
                raise ShapeError(f"grid {h}x{w} does not match feature width {self.features.shape[1]}")

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return self.meta.num_classes

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.meta)


@dataclass
class Shard:
    owner: int
    indices: np.ndarray
    train: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    test: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.train = np.asarray(self.train, dtype=np.int64)
        self.test = np.asarray(self.test, dtype=np.int64)

    def __len__(self):
        return self.indices.size


@dataclass(frozen=True)
class PoisonTransform:
    """Input transform paired with a target label.

    ``coords`` are flat feature indices for ``feature_set`` and ``(row, col)``
    pairs for ``trigger_patch``.
    """

    kind: str = "trigger_patch"
    coords: tuple = ()
    values: tuple = ()
    target: int = 0
    fraction: float = 0.5
    grid_shape: Optional[tuple] = None

    KINDS = ("trigger_patch", "feature_set", "label_flip", "edge_case")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown poison transform kind {self.kind!r}; valid: {self.KINDS}")
        coords = tuple(tuple(int(v) for v in c) if np.ndim(c) else int(c) for c in self.coords)
        object.__setattr__(self, "coords", coords)
        vals = tuple(float(v) for v in np.broadcast_to(self.values, (len(coords),))) if coords else ()
        object.__setattr__(self, "values", vals)
        if not 0.0 <= self.fraction <= 1.0:
            raise ConfigError("poison fraction must be in [0, 1]")
        if self.target < 0:
            raise ConfigError("target label must be non-negative")

    def with_values(self, values) -> "PoisonTransform":
        return PoisonTransform(self.kind, self.coords, tuple(values), self.target,
                               self.fraction, self.grid_shape)

    def with_coords(self, coords) -> "PoisonTransform":
        sel = {c: v for c, v in zip(self.coords, self.values)}
        coords = tuple(coords)
        return PoisonTransform(self.kind, coords, tuple(sel[c] for c in coords), self.target,
                               self.fraction, self.grid_shape)

    def flat_indices(self, dim: int) -> np.ndarray:
        """Coordinates as flat feature indices, bounds-checked against ``dim``."""
        if self.kind == "trigger_patch":
            if self.grid_shape is None:
                raise ConfigError("trigger_patch needs grid_shape")
            h, w = self.grid_shape
            if h * w != dim:
                raise ShapeError(f"grid {h}x{w} does not match feature width {dim}")
            idx = []
            for r, c in self.coords:
                if not (0 <= r < h and 0 <= c < w):
                    raise ShapeError(f"trigger cell ({r}, {c}) outside {h}x{w} grid")
                idx.append(r * w + c)
            return np.asarray(idx, dtype=np.int64)
        if self.kind == "feature_set":
            idx = np.asarray(self.coords, dtype=np.int64)
            if idx.size and (idx.min() < 0 or idx.max() >= dim):
                raise ShapeError(f"trigger feature index outside [0, {dim})")
            return idx
        raise ConfigError(f"transform kind {self.kind!r} has no trigger coordinates")

    def check(self, num_classes: int, dim: int):
        if self.target >= num_classes:
            raise ConfigError(f"target label {self.target} outside [0, {num_classes})")
        if self.kind in ("trigger_patch", "feature_set"):
            self.flat_indices(dim)


# ---------------------------------------------------------------------------
# generators and ingestion
# ---------------------------------------------------------------------------

def gen_blobs(C: int, d: int, n_per_class: int, spread: float, seed: int,
              center_scale: float = 3.0, name: str = "blobs") -> Dataset:
    """Isotropic Gaussian clusters around random class means."""
    if C < 2 or d < 2:
        raise ConfigError("gen_blobs needs C >= 2 and d >= 2")
    if n_per_class < 1 or spread < 0:
        raise ConfigError("n_per_class must be >= 1 and spread >= 0")
    rng = stream(seed, "gen_blobs")
    means = rng.normal(0.0, center_scale, size=(C, d))
    X = np.repeat(means, n_per_class, axis=0) + rng.normal(0.0, spread, size=(C * n_per_class, d))
    y = np.repeat(np.arange(C), n_per_class)
    return Dataset(X, y, DatasetMeta(C, "flat", None, name))


def gen_grid(C: int, h: int, w: int, n_per_class: int, noise: float, seed: int,
             name: str = "grid") -> Dataset:
    """Distinct binary base pattern per class on an ``h x w`` grid, plus Gaussian noise.

    The bottom-right 3x3 block is kept blank in every pattern so that the
    default trigger location carries no class signal.
    """
    if h < 4 or w < 4:
        raise ConfigError("gen_grid needs h, w >= 4")
    if C < 2 or n_per_class < 1 or noise < 0:
        raise ConfigError("gen_grid needs C >= 2, n_per_class >= 1, noise >= 0")
    rng = stream(seed, "gen_grid")
    blank = np.zeros((h, w), dtype=bool)
    blank[h - 3:, w - 3:] = True
    patterns = []
    seen = set()
    while len(patterns) < C:
        p = (rng.random((h, w)) < 0.5).astype(np.float64)
        p[blank] = 0.0
        key = p.tobytes()
        if key in seen:
            continue
        seen.add(key)
        patterns.append(p.ravel())
    base = np.stack(patterns)
    X = np.repeat(base, n_per_class, axis=0) + rng.normal(0.0, noise, size=(C * n_per_class, h * w))
    y = np.repeat(np.arange(C), n_per_class)
    return Dataset(X, y, DatasetMeta(C, "grid", (h, w), name))


def load_csv(path: Union[str, os.PathLike], label_column: Union[str, int] = -1,
             header: bool = True, name: Optional[str] = None) -> Dataset:
    """Comma-separated numeric table with one integer label column."""
    if not os.path.exists(path):
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(cell.strip() for cell in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    first_line = 1
    names = None
    if header:
        names = [c.strip() for c in rows[0]]
        rows = rows[1:]
        first_line = 2
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0]) if names is None else len(names)
    if isinstance(label_column, str):
        if names is None:
            raise DataError(f"{path}: label column {label_column!r} given by name but file has no header")
        if label_column not in names:
            raise DataError(f"{path}: label column {label_column!r} not found in header {names}")
        lab = names.index(label_column)
    else:
        lab = label_column if label_column >= 0 else width + label_column
        if not 0 <= lab < width:
            raise DataError(f"{path}: label column index {label_column} out of range for {width} columns")
    feats, labels = [], []
    for i, row in enumerate(rows):
        line = first_line + i
        if len(row) != width:
            raise DataError(f"{path}: line {line} has {len(row)} columns, expected {width}")
        vals = []
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: line {line}, column {j + 1}: non-numeric cell {cell!r}") from None
            if j == lab:
                if v != int(v) or v < 0:
                    raise DataError(f"{path}: line {line}, column {j + 1}: label {cell!r} is not a non-negative integer")
                labels.append(int(v))
            else:
                vals.append(v)
        feats.append(vals)
    y = np.asarray(labels, dtype=np.int64)
    C = int(y.max()) + 1
    missing = sorted(set(range(C)) - set(y.tolist()))
    if missing:
        log.warning("%s: classes %s have no samples (C inferred as %d)", path, missing, C)
    if C < 2:
        C = 2
    X = np.asarray(feats, dtype=np.float64).reshape(len(rows), width - 1)
    return Dataset(X, y, DatasetMeta(C, "flat", None, name or os.path.basename(str(path))))


# ---------------------------------------------------------------------------
# partitioning
# ---------------------------------------------------------------------------

def dirichlet_partition(dataset: Dataset, N: int, concentration: float, min_shard: int,
                        seed: int) -> list:
    """Label-skewed disjoint cover of ``dataset`` by ``N`` shards.

    Each client draws a label mixture ``p_i ~ Dir(concentration * 1_C)`` and fills
    a fixed quota (``n // N``, remainder spread over the first clients) by
    drawing classes from ``p_i`` restricted to classes that still have unassigned
    samples. Clients take turns one sample at a time so no client is favoured.
    ``concentration = inf`` deals each class round-robin (no sampling).
    """
    n, C = dataset.n, dataset.num_classes
    if N < 1:
        raise ConfigError("N must be >= 1")
    if not (concentration > 0):
        raise ConfigError("Dirichlet concentration must be > 0 (or inf)")
    if n < N * min_shard:
        raise DataError(f"infeasible partition: {n} samples cannot give {N} shards of >= {min_shard}")
    rng = stream(seed, "partition")
    by_class = [rng.permutation(np.flatnonzero(dataset.labels == c)) for c in range(C)]

    if math.isinf(concentration):
        order = np.concatenate(by_class)
        return [Shard(i, np.sort(order[i::N])) for i in range(N)]

    mix = rng.dirichlet(np.full(C, concentration), size=N)
    quota = np.full(N, n // N)
    quota[: n % N] += 1
    remaining = np.array([len(b) for b in by_class], dtype=np.int64)
    cursor = np.zeros(C, dtype=np.int64)
    owned = [[] for _ in range(N)]
    filled = np.zeros(N, dtype=np.int64)
    u = rng.random(n)
    k = 0
    while k < n:
        for i in range(N):
            if filled[i] >= quota[i]:
                continue
            avail = remaining > 0
            p = np.where(avail, mix[i], 0.0)
            tot = p.sum()
            if tot <= 0.0:
                p = remaining.astype(np.float64)
                tot = p.sum()
            c = int(np.searchsorted(np.cumsum(p), u[k] * tot, side="right"))
            c = min(c, C - 1)
            while not avail[c]:
                c = (c + 1) % C
            owned[i].append(by_class[c][cursor[c]])
            cursor[c] += 1
            remaining[c] -= 1
            filled[i] += 1
            k += 1
    return [Shard(i, np.sort(np.asarray(owned[i], dtype=np.int64))) for i in range(N)]


def _largest_remainder(counts: np.ndarray, total: int) -> np.ndarray:
    ideal = counts * (total / counts.sum())
    alloc = np.floor(ideal).astype(np.int64)
    short = total - alloc.sum()
    if short > 0:
        order = np.argsort(-(ideal - alloc), kind="stable")
        alloc[order[:short]] += 1
    return np.minimum(alloc, counts)


def split_train_test(shard: Shard, labels: np.ndarray, test_fraction: float, seed: int) -> Shard:
    """Stratified split of one shard; returns a new Shard with train/test filled."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must be in (0, 1)")
    n = len(shard)
    if n < 2:
        raise DataError(f"shard {shard.owner} has {n} samples, too small to split")
    n_test = min(max(1, int(round(test_fraction * n))), n - 1)
    rng = stream(seed, "split", shard.owner)
    lab = np.asarray(labels)[shard.indices]
    classes, counts = np.unique(lab, return_counts=True)
    alloc = _largest_remainder(counts, n_test)
    test = []
    for c, k in zip(classes, alloc):
        members = rng.permutation(shard.indices[lab == c])
        test.extend(members[:k].tolist())
    test = np.sort(np.asarray(test, dtype=np.int64))
    train = np.setdiff1d(shard.indices, test)
    return Shard(shard.owner, shard.indices, train, test)


def label_entropy(labels: np.ndarray, num_classes: int) -> float:
    counts = np.bincount(labels, minlength=num_classes).astype(np.float64)
    p = counts / counts.sum()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


# ---------------------------------------------------------------------------
# poison transforms
# ---------------------------------------------------------------------------

def apply_trigger(sample, transform: PoisonTransform):
    """Stamp one sample; returns (features, target label)."""
    x = np.array(sample, dtype=np.float64)
    idx = transform.flat_indices(x.size)
    x[idx] = transform.values
    return x, transform.target


def stamp_batch(X: np.ndarray, transform: PoisonTransform) -> np.ndarray:
    """Stamp every row of ``X``; returns a copy."""
    X = np.array(X, dtype=np.float64)
    idx = transform.flat_indices(X.shape[1])
    X[:, idx] = transform.values
    return X


def flip_labels(labels, num_classes: int, mode: str = "inverse", target: Optional[int] = None,
                source: Optional[int] = None, seed: int = 0) -> np.ndarray:
    """Label substitution: ``random``, ``inverse`` (l -> L-l-1) or ``targeted``."""
    y = np.asarray(labels, dtype=np.int64)
    L = num_classes
    if y.size and (y.min() < 0 or y.max() >= L):
        raise DataError(f"labels must lie in [0, {L})")
    if mode == "inverse":
        return L - y - 1
    if mode == "random":
        rng = stream(seed, "flip_random")
        shift = rng.integers(1, L, size=y.size)
        return (y + shift) % L
    if mode == "targeted":
        if target is None or not 0 <= target < L:
            raise ConfigError(f"targeted flip needs target in [0, {L}), got {target}")
        if source is not None and not 0 <= source < L:
            raise ConfigError(f"source label {source} outside [0, {L})")
        out = y.copy()
        mask = np.ones_like(y, dtype=bool) if source is None else (y == source)
        out[mask] = target
        return out
    raise ConfigError(f"unknown flip mode {mode!r}; valid: random, inverse, targeted")


@dataclass
class EdgeCasePool:
    indices: np.ndarray     # rows of the parent dataset, most extreme first
    features: np.ndarray
    labels: np.ndarray      # all equal to target
    true_labels: np.ndarray
    target: int

    def __len__(self):
        return self.indices.size

    def split(self, held_out_fraction: float, seed: int):
        """Disjoint (train, held-out) halves of the pool, as index arrays into the pool."""
        rng = stream(seed, "edge_split")
        order = rng.permutation(len(self))
        k = int(round(held_out_fraction * len(self)))
        return np.sort(order[k:]), np.sort(order[:k])


def edge_case_pool(dataset: Dataset, tail_fraction: float, target: int, seed: int = 0) -> EdgeCasePool:
    """Samples farthest from their own class centroid (diagonal-covariance distance)."""
    if not 0.0 < tail_fraction <= 1.0:
        raise ConfigError("tail_fraction must be in (0, 1]")
    if not 0 <= target < dataset.num_classes:
        raise ConfigError(f"target {target} outside [0, {dataset.num_classes})")
    X, y = dataset.features, dataset.labels
    dist = np.zeros(dataset.n)
    for c in range(dataset.num_classes):
        m = y == c
        if not m.any():
            continue
        mu = X[m].mean(axis=0)
        var = X[m].var(axis=0) + 1e-12
        dist[m] = (((X[m] - mu) ** 2) / var).sum(axis=1)
    k = math.ceil(round(tail_fraction * dataset.n, 9))
    order = np.lexsort((np.arange(dataset.n), -dist))[:k]
    return EdgeCasePool(
        indices=order,
        features=X[order].copy(),
        labels=np.full(k, target, dtype=np.int64),
        true_labels=y[order].copy(),
        target=target,
    )
