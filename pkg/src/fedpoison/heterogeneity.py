"""Device and communication heterogeneity: per-client conditions, epochs, dropout."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError
from .rng import stream

__all__ = [
    "HeterogeneityConfig",
    "ClientProfile",
    "PRACTICAL",
    "IDEAL",
    "sample_trunc_gauss",
    "local_epochs",
    "assign_profiles",
    "dropout_decision",
]


@dataclass(frozen=True)
class HeterogeneityConfig:
    dirichlet: float = 0.9   # tau_s; math.inf means IID
    device: float = 0.9      # tau_d
    comm: float = 0.9        # tau_c

    def __post_init__(self):
        if not self.dirichlet > 0:
            raise ConfigError("dirichlet concentration must be > 0 (or inf)")
        for name in ("device", "comm"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} level must be in [0, 1], got {v}")

    @property
    def is_ideal(self) -> bool:
        return math.isinf(self.dirichlet) and self.device == 1.0 and self.comm == 1.0


PRACTICAL = HeterogeneityConfig(0.9, 0.9, 0.9)
IDEAL = HeterogeneityConfig(math.inf, 1.0, 1.0)


@dataclass(frozen=True)
class ClientProfile:
    client_id: int
    shard_size: int
    device: float
    comm: float
    local_epochs: int
    malicious: bool = False
    attack_rank: Optional[int] = None  # position among malicious clients


def sample_trunc_gauss(level: float, n: int, seed: int, tag: str = "trunc_gauss") -> np.ndarray:
    """``n`` draws of N(0, sd=1-level) rejection-truncated to [0, 1]."""
    if not 0.0 <= level <= 1.0:
        raise ConfigError(f"level must be in [0, 1], got {level}")
    sd = 1.0 - level
    if sd == 0.0:
        return np.zeros(n)
    rng = stream(seed, tag)
    out = np.empty(0)
    while out.size < n:
        draw = rng.normal(0.0, sd, size=max(2 * (n - out.size), 16))
        draw = draw[(draw >= 0.0) & (draw <= 1.0)]
        out = np.concatenate([out, draw])
    return out[:n]


def local_epochs(base_epochs: int, device: float, size_ratio: float = 1.0) -> int:
    """Fewer epochs for weaker devices: max(1, round(E * (1 - device) * size_ratio))."""
    return max(1, int(round(base_epochs * (1.0 - device) * size_ratio)))


def assign_profiles(shard_sizes, het: HeterogeneityConfig, base_epochs: int, seed: int,
                    malicious=(), scale_by_data: bool = False) -> list:
    """One profile per shard; conditions indexed by client id, so order-independent.

    ``scale_by_data`` additionally scales epochs by mean shard size / own size.
    """
    sizes = np.asarray(list(shard_sizes), dtype=np.int64)
    if sizes.size == 0:
        raise ConfigError("need at least one shard")
    N = sizes.size
    dev = sample_trunc_gauss(het.device, N, seed, "device")
    com = sample_trunc_gauss(het.comm, N, seed, "comm")
    mean_size = sizes.mean()
    mal = sorted(set(int(m) for m in malicious))
    rank = {cid: r for r, cid in enumerate(mal)}
    profiles = []
    for i in range(N):
        ratio = (mean_size / sizes[i]) if (scale_by_data and sizes[i] > 0) else 1.0
        profiles.append(ClientProfile(
            client_id=i,
            shard_size=int(sizes[i]),
            device=float(dev[i]),
            comm=float(com[i]),
            local_epochs=local_epochs(base_epochs, dev[i], ratio),
            malicious=i in rank,
            attack_rank=rank.get(i),
        ))
    return profiles


def dropout_decision(profile: ClientProfile, round_t: int, seed: int) -> bool:
    """True when the client's upload fails this round (probability ``profile.comm``)."""
    u = stream(seed, "dropout", profile.client_id, round_t).random()
    return bool(u < profile.comm)
