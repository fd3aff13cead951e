"""Per-round evaluation, windowed security metrics and threat-model feasibility."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .data import PoisonTransform, stamp_batch
from .errors import ConfigError, DataError
from .nn import ModelParams, predict

__all__ = [
    "RoundRecord",
    "MetricsConfig",
    "MetricsSummary",
    "eval_round",
    "window_size",
    "windowed_stats",
    "paired_degradation",
    "summarize_run",
    "hypergeom_sf",
    "binom_sf",
    "min_compromised",
    "consecutive_prob",
]


@dataclass
class RoundRecord:
    t: int
    selected: list
    dropped: list
    malicious_selected: list
    acc: float
    asr: Optional[float] = None
    edge_asr: Optional[float] = None
    benign_norm: Optional[float] = None
    malicious_norm: Optional[float] = None
    weight_sum: Optional[float] = None
    empty_round: bool = False
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RoundRecord":
        return cls(**d)


@dataclass(frozen=True)
class MetricsConfig:
    window_fraction: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.window_fraction < 1.0 and self.window_fraction != 1.0:
            raise ConfigError("window_fraction must be in (0, 1]")


@dataclass
class MetricsSummary:
    window_start: int
    window_end: int
    acc_mean: float
    acc_std: float
    bsa: Optional[float] = None
    bsv: Optional[float] = None
    edge_bsa: Optional[float] = None
    edge_bsv: Optional[float] = None
    bda: Optional[float] = None
    bdv: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def eval_round(params: ModelParams, X: np.ndarray, y: np.ndarray,
               transform: Optional[PoisonTransform] = None):
    """Clean top-1 accuracy and, given a trigger, attack success rate.

    ASR only counts test rows whose true label differs from the target.
    """
    if len(y) == 0:
        raise DataError("empty evaluation set")
    acc = float(np.mean(predict(params, X) == y))
    if transform is None:
        return acc, None
    keep = y != transform.target
    if not keep.any():
        return acc, None
    pred = predict(params, stamp_batch(X[keep], transform))
    return acc, float(np.mean(pred == transform.target))


def window_size(w: float, T: int) -> int:
    # round() guards against 0.1 * 30 == 3.0000000000000004
    return max(1, math.ceil(round(w * T, 9)))


def windowed_stats(series, w: float = 0.1, T: Optional[int] = None):
    """Mean and population std over the last ceil(w*T) entries."""
    s = np.asarray(series, dtype=np.float64)
    T = s.size if T is None else T
    n = window_size(w, T)
    if s.size < T or s.size < n:
        raise DataError(f"series of length {s.size} is shorter than T={T} (window {n})")
    tail = s[T - n:T]
    return float(tail.mean()), float(tail.std())


def paired_degradation(clean_acc, attacked_acc, w: float = 0.1):
    """(BDA, BDV) of ud_t = acc_t(clean) - acc_t(attacked)."""
    a = np.asarray(clean_acc, dtype=np.float64)
    b = np.asarray(attacked_acc, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"paired series differ in length ({a.size} vs {b.size})")
    return windowed_stats(a - b, w)


def summarize_run(records, w: float = 0.1, clean_records=None) -> MetricsSummary:
    T = len(records)
    n = window_size(w, T)
    acc = [r.acc for r in records]
    m, s = windowed_stats(acc, w)
    out = MetricsSummary(window_start=T - n + 1, window_end=T, acc_mean=m, acc_std=s)
    asr = [r.asr for r in records]
    if T and all(a is not None for a in asr):
        out.bsa, out.bsv = windowed_stats(asr, w)
    edge = [r.edge_asr for r in records]
    if T and all(e is not None for e in edge):
        out.edge_bsa, out.edge_bsv = windowed_stats(edge, w)
    if clean_records is not None:
        out.bda, out.bdv = paired_degradation([r.acc for r in clean_records], acc, w)
    return out


# ---------------------------------------------------------------------------
# feasibility calculators
# ---------------------------------------------------------------------------

def _log_comb(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def hypergeom_sf(k_needed: int, N: int, M: int, K: int) -> float:
    """P[X >= k_needed] for X ~ Hypergeometric(population N, successes M, draws K)."""
    lo = max(k_needed, 0, K - (N - M))
    hi = min(K, M)
    if lo > hi:
        return 0.0
    ks = np.arange(lo, hi + 1)
    logp = _log_comb(M, ks) + _log_comb(N - M, K - ks) - _log_comb(N, K)
    return float(min(1.0, np.exp(logp).sum()))


def binom_sf(k_needed: int, K: int, p: float) -> float:
    """P[X >= k_needed] for X ~ Binomial(K, p)."""
    if k_needed <= 0:
        return 1.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0 if k_needed <= K else 0.0
    ks = np.arange(k_needed, K + 1)
    logp = _log_comb(K, ks) + ks * math.log(p) + (K - ks) * math.log1p(-p)
    return float(min(1.0, np.exp(logp).sum()))


def min_compromised(N: int, K: int, k_needed: int, confidence: float,
                    model: str = "binomial") -> Optional[int]:
    """Smallest number of compromised clients M (out of N) such that a round
    selecting K clients contains at least ``k_needed`` of them with the given
    probability. Returns None when no M <= N suffices.

    ``model="binomial"`` treats each of the K slots as an independent draw
    with malicious probability M/N; ``model="hypergeometric"`` samples the K
    clients without replacement.
    """
    if not 0 <= k_needed <= K <= N:
        raise ConfigError("need 0 <= k_needed <= K <= N")
    if not 0.0 <= confidence <= 1.0:
        raise ConfigError("confidence must be in [0, 1]")
    if model == "binomial":
        prob = lambda M: binom_sf(k_needed, K, M / N)
    elif model == "hypergeometric":
        prob = lambda M: hypergeom_sf(k_needed, N, M, K)
    else:
        raise ConfigError(f"unknown selection model {model!r}; valid: binomial, hypergeometric")
    for M in range(N + 1):
        # tiny slack absorbs summation rounding at confidence == 1
        if prob(M) >= confidence - 1e-12:
            return M
    return None


def consecutive_prob(alpha: float, r: int) -> float:
    """Probability that one fixed client is selected ``r`` rounds in a row."""
    if not 0.0 < alpha <= 1.0:
        raise ConfigError("alpha must be in (0, 1]")
    if r < 1:
        raise ConfigError("r must be >= 1")
    return alpha ** r
