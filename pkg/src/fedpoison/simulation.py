"""Round-based FedAvg simulation with heterogeneity and colluding attackers."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .aggregation import UpdateVector, aggregate_fedavg, check_robust_preconditions, robust_aggregate
from .attacks.base import AttackContext, apply_constraint
from .attacks.registry import Attack
from .config import ExperimentConfig, malicious_count
from .data import (
    Dataset,
    EdgeCasePool,
    dirichlet_partition,
    edge_case_pool,
    gen_blobs,
    gen_grid,
    load_csv,
    split_train_test,
)
from .errors import ConfigError
from .heterogeneity import ClientProfile, assign_profiles, dropout_decision
from .metrics import RoundRecord, eval_round
from .nn import ModelParams, init_model, predict, sgd_epochs
from .rng import stream

log = logging.getLogger(__name__)

__all__ = [
    "Federation",
    "ClientTrainer",
    "build_dataset",
    "build_federation",
    "select_clients",
    "train_stream",
    "local_train",
    "Simulation",
    "run_experiment",
]


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    ds = cfg.dataset
    seed = cfg.seed if ds.seed is None else ds.seed
    if ds.kind == "blobs":
        return gen_blobs(ds.num_classes, ds.dim, ds.n_per_class, ds.spread, seed, ds.center_scale)
    if ds.kind == "grid":
        return gen_grid(ds.num_classes, ds.height, ds.width, ds.n_per_class, ds.noise, seed)
    return load_csv(ds.path, ds.label_column, ds.header)


@dataclass
class Federation:
    """Static per-run data: shards, client profiles, evaluation set, edge-case pool."""

    dataset: Dataset
    shards: list
    profiles: list
    test_X: np.ndarray
    test_y: np.ndarray
    malicious: list
    edge_pool: Optional[EdgeCasePool] = None
    edge_train_rows: Optional[np.ndarray] = None
    edge_eval_rows: Optional[np.ndarray] = None

    def client_data(self, cid: int):
        sh = self.shards[cid]
        return self.dataset.features[sh.train], self.dataset.labels[sh.train]


def build_federation(cfg: ExperimentConfig, dataset: Optional[Dataset] = None) -> Federation:
    dataset = build_dataset(cfg) if dataset is None else dataset
    seed = cfg.seed
    N = cfg.fl.num_clients
    het = cfg.het()

    pool = train_rows = eval_rows = None
    keep = np.arange(dataset.n)
    if cfg.attack is not None and cfg.attack.kind == "edgecase":
        p = {"tail_fraction": 0.05, "held_out_fraction": 0.5, **cfg.attack.params}
        pool = edge_case_pool(dataset, p["tail_fraction"], cfg.attack.trigger.target, seed)
        train_rows, eval_rows = pool.split(p["held_out_fraction"], seed)
        # pool rows stay out of every client's clean data, in both runs of a pair
        keep = np.setdiff1d(keep, pool.indices)
    base = dataset.subset(keep) if keep.size != dataset.n else dataset

    shards = dirichlet_partition(base, N, het.dirichlet, cfg.min_shard, seed)
    shards = [split_train_test(sh, base.labels, cfg.partition.test_fraction, seed) for sh in shards]
    test_idx = np.sort(np.concatenate([sh.test for sh in shards]))

    M = malicious_count(cfg.malicious_ratio, N)
    malicious = sorted(int(i) for i in stream(seed, "malicious").permutation(N)[:M])
    profiles = assign_profiles([sh.train.size for sh in shards], het, cfg.train.local_epochs,
                               seed, malicious, cfg.train.scale_epochs_by_data)
    return Federation(base, shards, profiles, base.features[test_idx], base.labels[test_idx],
                      malicious, pool, train_rows, eval_rows)


def select_clients(N: int, K: int, round_t: int, seed: int) -> list:
    """K distinct clients, uniform without replacement, ascending ids."""
    if not 1 <= K <= N:
        raise ConfigError(f"cannot select {K} of {N} clients")
    return sorted(int(i) for i in stream(seed, "select", round_t).permutation(N)[:K])


def train_stream(seed: int, client_id: int, round_t: int) -> np.random.Generator:
    """Batch-order stream for one client's local training in one round."""
    return stream(seed, "train", client_id, round_t)


class ClientTrainer:
    """Reruns one client's local training from the round's global model.

    Every call draws batch order from the same keyed stream, so calls that
    only change labels, gradients or poisoned rows stay batch-aligned with
    the honest run.
    """

    def __init__(self, global_params: ModelParams, X, y, epochs: int, lr: float,
                 batch_size: int, seed: int, client_id: int, round_t: int, num_classes: int):
        self.global_params = global_params
        self.X = X
        self.y = y
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.seed = seed
        self.client_id = client_id
        self.round_t = round_t
        self.num_classes = num_classes
        self.last_params = None

    def __call__(self, X=None, y=None, epoch_data=None, grad_transform=None) -> np.ndarray:
        X = self.X if X is None else X
        y = self.y if y is None else y
        rng = train_stream(self.seed, self.client_id, self.round_t)
        local = sgd_epochs(self.global_params, X, y, self.epochs, self.lr, self.batch_size,
                           rng, epoch_data, grad_transform)
        self.last_params = local.flat
        return local.flat - self.global_params.flat


def local_train(global_params: ModelParams, profile: ClientProfile, X, y, lr: float,
                batch_size: int, seed: int, round_t: int, num_classes: int) -> UpdateVector:
    """Honest local training; returns W_final - G along with W_final."""
    tr = ClientTrainer(global_params, X, y, profile.local_epochs, lr, batch_size, seed,
                       profile.client_id, round_t, num_classes)
    delta = tr()
    return UpdateVector(profile.client_id, delta, int(len(y)), tr.last_params)


class Simulation:
    """One federated training run.

    ``attack_enabled=False`` keeps the malicious client set but lets those
    clients train honestly, which is the clean half of a paired run.
    ``context_observer`` sees every AttackContext before crafting, and
    ``benign_hook(update) -> update`` can replace benign clients' updates
    after training (both are instrumentation for tests).
    """

    def __init__(self, cfg: ExperimentConfig, attack_enabled: bool = True,
                 federation: Optional[Federation] = None, workers: int = 1,
                 context_observer: Optional[Callable] = None,
                 benign_hook: Optional[Callable] = None):
        self.cfg = cfg
        self.fed = build_federation(cfg) if federation is None else federation
        self.seed = cfg.seed
        self.workers = workers
        self.context_observer = context_observer
        self.benign_hook = benign_hook
        ds = self.fed.dataset
        dims = [ds.dim] + list(cfg.model.hidden) + [ds.num_classes]
        self.params = init_model(dims, cfg.seed)
        self.prev_delta = np.zeros_like(self.params.flat)
        self.round = 0
        self.attack: Optional[Attack] = None
        if cfg.attack is not None:
            spec = cfg.attack.spec(ds.meta.feature_kind, ds.meta.grid_shape, ds.dim)
            if spec.trigger is not None:
                spec.trigger.check(ds.num_classes, ds.dim)
            self.attack = Attack(spec, cfg.allow_weight_scaling, self.fed.edge_pool,
                                 self.fed.edge_train_rows, self.fed.edge_eval_rows)
        self.attack_enabled = attack_enabled and self.attack is not None and bool(self.fed.malicious)

    # -- helpers ----------------------------------------------------------

    def _trainer(self, cid: int, t: int) -> ClientTrainer:
        prof = self.fed.profiles[cid]
        X, y = self.fed.client_data(cid)
        tc = self.cfg.train
        return ClientTrainer(self.params, X, y, prof.local_epochs, tc.learning_rate,
                             tc.batch_size, self.seed, cid, t, self.fed.dataset.num_classes)

    def _honest(self, cid: int, t: int) -> Optional[UpdateVector]:
        tr = self._trainer(cid, t)
        if tr.y.size == 0:
            log.warning("client %d has no training data; treated as dropped", cid)
            return None
        delta = tr()
        return UpdateVector(cid, delta, int(tr.y.size), tr.last_params)

    def _aggregate(self, survivors):
        agg = self.cfg.fl.aggregator
        if agg == "fedavg" or not survivors:
            new, w = aggregate_fedavg(self.params, survivors)
            return new, (float(w.sum()) if w.size else None)
        try:
            check_robust_preconditions(agg, len(survivors), self.cfg.fl.krum_f, self.cfg.fl.trim_beta)
        except ConfigError as e:
            log.warning("round %d: %s; falling back to coordinate median", self.round, e)
            return robust_aggregate(self.params, survivors, "median"), None
        return robust_aggregate(self.params, survivors, agg, self.cfg.fl.krum_f,
                                self.cfg.fl.trim_beta), None

    def evaluate(self, params: ModelParams):
        trig = self.attack.eval_transform() if self.attack is not None else None
        acc, asr = eval_round(params, self.fed.test_X, self.fed.test_y, trig)
        edge_asr = None
        if self.fed.edge_pool is not None and self.fed.edge_eval_rows is not None:
            pool = self.fed.edge_pool
            rows = self.fed.edge_eval_rows
            rows = rows[pool.true_labels[rows] != pool.target]
            if rows.size:
                edge_asr = float(np.mean(predict(params, pool.features[rows]) == pool.target))
        return acc, asr, edge_asr

    # -- round ------------------------------------------------------------

    def run_round(self, t: Optional[int] = None) -> RoundRecord:
        t = self.round + 1 if t is None else t
        if t > self.cfg.fl.rounds:
            raise ConfigError(f"round {t} exceeds configured rounds {self.cfg.fl.rounds}")
        N, K = self.cfg.fl.num_clients, self.cfg.fl.clients_per_round
        selected = select_clients(N, K, t, self.seed)
        mal_set = set(self.fed.malicious)
        mal_sel = [c for c in selected if c in mal_set]
        attacking = self.attack_enabled
        benign_ids = [c for c in selected if not (attacking and c in mal_set)]

        updates = {}
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as ex:
                results = list(ex.map(lambda c: self._honest(c, t), benign_ids))
        else:
            results = [self._honest(c, t) for c in benign_ids]
        for cid, up in zip(benign_ids, results):
            if up is None:
                continue
            if self.benign_hook is not None:
                up = self.benign_hook(up)
            updates[cid] = up

        notes = {}
        mal_norms = []
        if attacking and mal_sel:
            # barrier: every selected colluder's honest update exists before any crafting
            colluder = {}
            for cid in mal_sel:
                up = self._honest(cid, t)
                if up is not None:
                    colluder[cid] = up
            shared = {}
            for cid in sorted(colluder):
                own = colluder[cid]
                ctx = AttackContext(
                    client_id=cid,
                    round_t=t,
                    global_params=self.params,
                    own_update=own.delta.copy(),
                    colluder_updates={k: v.delta.copy() for k, v in colluder.items()},
                    prev_global_delta=self.prev_delta.copy(),
                    rng=stream(self.seed, "attack", cid, t),
                    num_selected=K,
                    sample_count=own.sample_count,
                    attack_rank=self.fed.profiles[cid].attack_rank or 0,
                    trainer=self._trainer(cid, t),
                    shared=shared,
                )
                if self.context_observer is not None:
                    self.context_observer(ctx)
                delta = apply_constraint(self.attack.craft(ctx), self.attack.constraint)
                updates[cid] = UpdateVector(cid, delta, own.sample_count)
                mal_norms.append(float(np.linalg.norm(delta)))
                if ctx.notes:
                    notes[str(cid)] = _plain(ctx.notes)

        dropped = [c for c in selected if c in updates and dropout_decision(self.fed.profiles[c], t, self.seed)]
        dropped += [c for c in selected if c not in updates]
        dropped = sorted(dropped)
        survivors = [updates[c] for c in selected if c in updates and c not in dropped]

        new_params, wsum = self._aggregate(survivors)
        self.prev_delta = new_params.flat - self.params.flat
        self.params = new_params
        self.round = t
        acc, asr, edge_asr = self.evaluate(new_params)

        benign_norms = [float(np.linalg.norm(updates[c].delta)) for c in benign_ids if c in updates]
        return RoundRecord(
            t=t,
            selected=selected,
            dropped=dropped,
            malicious_selected=mal_sel,
            acc=acc,
            asr=asr,
            edge_asr=edge_asr,
            benign_norm=float(np.mean(benign_norms)) if benign_norms else None,
            malicious_norm=float(np.mean(mal_norms)) if mal_norms else None,
            weight_sum=wsum,
            empty_round=not survivors,
            notes=notes,
        )

    def run(self, progress: Optional[Callable] = None):
        records = []
        for t in range(self.round + 1, self.cfg.fl.rounds + 1):
            rec = self.run_round(t)
            records.append(rec)
            if progress is not None:
                progress(rec)
        return records, self.params


def _plain(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, np.generic):
            v = v.item()
        elif isinstance(v, (list, tuple)):
            v = [x.item() if isinstance(x, np.generic) else x for x in v]
        out[k] = v
    return out


def run_experiment(cfg: ExperimentConfig, attack_enabled: bool = True, **kwargs):
    """Run all rounds; returns (records, final params)."""
    return Simulation(cfg, attack_enabled, **kwargs).run()
