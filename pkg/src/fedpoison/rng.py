"""Keyed, counter-based random streams.

Every random decision in a simulation is drawn from a stream addressed by
``(root_seed, purpose, *ids)``. Streams are Philox generators, so a stream's
output depends only on its key and never on how many other streams were
consumed before it. This is what makes parallel and sequential client
execution produce identical results.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "key_int"]


def key_int(part) -> int:
    """Map a key component (str, int, bool) to a non-negative 32-bit integer."""
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"stream key components must be non-negative, got {part}")
        return int(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"unsupported stream key component: {part!r}")


def stream(seed: int, *key) -> np.random.Generator:
    """Return an independent generator for ``(seed, *key)``."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(key_int(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))
