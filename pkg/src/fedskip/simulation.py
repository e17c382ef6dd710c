"""Round loop for every strategy, plus the Local/Cross Training toy modes."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from fedskip.config import ExperimentConfig
from fedskip.data import (ClientDataset, Dataset, dirichlet_partition, filter_min_samples,
                          generate_blobs, generate_synthetic_leaf, load_clients)
from fedskip.local import LocalConfig, LocalResult, train_local
from fedskip.metrics import client_drift_variance
from fedskip.model import ModelSpec, ParamVector, evaluate_accuracy, init_params
from fedskip.server import (SampleLedger, SkipSchedule, cumulative_weights, fedavg_weights,
                            fednova_aggregate, is_skip_round, scaffold_server_update,
                            shuffle_permutation, weighted_average)

# Tags that keep the server's RNG streams apart from client streams.
_CLIENT, _SAMPLE, _SHUFFLE, _ORDER = 0, 1, 2, 3


def server_rng(seed: int, round_index: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([seed, round_index, 0, tag])


@dataclass
class RoundRecord:
    round: int
    action: str
    test_accuracy: Optional[float]
    drift_variance: Optional[float]
    aggregations_so_far: int
    comm_rounds_so_far: int
    wall_time_ms: int = 0

    def to_json(self, timing: bool = False) -> str:
        data = asdict(self)
        if not timing:
            data["wall_time_ms"] = 0
        return json.dumps(data)


@dataclass
class Snapshot:
    """Models held by the slots at one point of the run, with their weights."""

    round: int
    stage: str  # "distributed" (after the server step) or "trained"
    models: list[ParamVector]
    weights: list[float]


@dataclass
class RunResult:
    records: list[RoundRecord]
    final_params: ParamVector
    final_aggregation: bool = True
    trajectory: list[Snapshot] = field(default_factory=list)
    max_grad_norm: float = 0.0
    max_step_norm: float = 0.0
    max_steps: int = 0

    def best_accuracy(self) -> float:
        return max(r.test_accuracy for r in self.records if r.test_accuracy is not None)


@dataclass(frozen=True)
class Federation:
    spec: ModelSpec
    clients: list[ClientDataset]
    test: Dataset


def build_federation(cfg: ExperimentConfig) -> Federation:
    ds = cfg.dataset
    if ds.kind == "blobs":
        train, test = generate_blobs(ds.num_classes, ds.input_dim, ds.n_total,
                                     ds.class_sep, cfg.data_seed)
        clients = dirichlet_partition(train, cfg.partition_config())
        input_dim, num_classes = ds.input_dim, ds.num_classes
    elif ds.kind == "leaf":
        clients, test = generate_synthetic_leaf(ds.synthetic(cfg.seed))
        input_dim, num_classes = ds.num_features, ds.num_classes
    else:
        clients, loaded = load_clients(ds.path)
        if loaded is None:
            raise FileNotFoundError(f"{ds.path}: test.tsv is required")
        test = loaded
        input_dim = test.X.shape[1]
        num_classes = int(max(test.y.max(), *(c.train.y.max() for c in clients))) + 1
    clients = filter_min_samples(clients, cfg.min_samples)
    return Federation(cfg.model.spec(input_dim, num_classes), clients, test)


def sample_clients(all_clients: Sequence[ClientDataset], fraction: float,
                   rng: np.random.Generator) -> list[ClientDataset]:
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    n = len(all_clients)
    m = max(1, int(round(fraction * n)))
    if m >= n:
        return list(all_clients)
    return [all_clients[i] for i in rng.choice(n, size=m, replace=False)]


def _schedule(cfg: ExperimentConfig) -> SkipSchedule:
    delta = cfg.strategy.delta if cfg.strategy.kind == "fedskip" else 1
    return SkipSchedule(delta, cfg.rounds)


def run_federated(cfg: ExperimentConfig, threads: int = 1,
                  federation: Federation | None = None,
                  keep_trajectory: bool = False) -> RunResult:
    """Execute the configured strategy for ``cfg.rounds`` rounds.

    Every round the server samples clients, then either broadcasts ``w0``
    (round 0), shuffles last round's models across the slots (skip rounds) or
    aggregates them and broadcasts the average. Records are emitted after the
    sampled clients finish local training; accuracy and drift are measured on
    the aggregate the server would form from the current slot models.
    """
    fed = federation or build_federation(cfg)
    spec, clients, test = fed.spec, fed.clients, fed.test
    kind = cfg.strategy.kind
    local_cfg = cfg.local_config()
    schedule = _schedule(cfg)
    num_slots = max(1, int(round(cfg.sample_fraction * len(clients))))
    num_slots = min(num_slots, len(clients))

    w0 = init_params(spec, cfg.seed)
    ledger = SampleLedger.empty(num_slots)
    models: list[ParamVector] = []
    pending: ParamVector | None = None
    c_global = ParamVector.zeros(spec)
    c_clients: dict[int, ParamVector] = {}

    records: list[RoundRecord] = []
    trajectory: list[Snapshot] = []
    aggregations = 0
    max_grad = max_step = 0.0
    max_steps = 0

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for t in range(cfg.rounds):
            started = time.perf_counter()
            sampled = sample_clients(clients, cfg.sample_fraction, server_rng(cfg.seed, t, _SAMPLE))

            if t == 0:
                action = "init"
                models = [w0] * num_slots
                aggregations += 1
            elif is_skip_round(t, schedule):
                action = "skip"
                order = shuffle_permutation(num_slots, server_rng(cfg.seed, t, _SHUFFLE))
                models = [models[i] for i in order]
                ledger.permute(order)
            else:
                action = "aggregate"
                models = [pending] * num_slots
                ledger.reset()
                aggregations += 1

            if keep_trajectory:
                weights = (cumulative_weights(ledger) if action == "skip"
                           else fedavg_weights(sampled))
                trajectory.append(Snapshot(t, "distributed", list(models), weights))

            def work(k: int) -> LocalResult:
                client = sampled[k]
                controls = None
                if kind == "scaffold":
                    c_k = c_clients.get(client.client_id) or ParamVector.zeros(spec)
                    controls = (c_global, c_k)
                anchor = models[k] if kind == "fedprox" else None
                return train_local(models[k], client, local_cfg, anchor=anchor,
                                   controls=controls, round_index=t)

            if pool is None:
                results = [work(k) for k in range(num_slots)]
            else:
                results = list(pool.map(work, range(num_slots)))

            for r in results:
                max_grad = max(max_grad, r.max_grad_norm)
                max_step = max(max_step, r.max_step_norm)
                max_steps = max(max_steps, r.steps_taken)
            start_models = models
            models = [r.params for r in results]
            ledger.record([c.n_samples for c in sampled])

            if kind == "scaffold":
                for client, r in zip(sampled, results):
                    c_k = c_clients.get(client.client_id) or ParamVector.zeros(spec)
                    c_clients[client.client_id] = c_k + r.control_delta
                c_global = scaffold_server_update(
                    c_global, [r.control_delta for r in results], num_slots / len(clients))

            if kind == "fedskip":
                weights = cumulative_weights(ledger)
            else:
                weights = fedavg_weights(sampled)
            if kind == "fednova":
                pending = fednova_aggregate(start_models[0], results, weights)
            else:
                pending = weighted_average(models, weights)

            if keep_trajectory:
                trajectory.append(Snapshot(t, "trained", list(models), weights))

            accuracy = None
            if t % cfg.eval_every == 0 or t == cfg.rounds - 1:
                accuracy = evaluate_accuracy(spec, pending, test.X, test.y)
            records.append(RoundRecord(
                round=t, action=action, test_accuracy=accuracy,
                drift_variance=client_drift_variance(models, weights),
                aggregations_so_far=aggregations, comm_rounds_so_far=t + 1,
                wall_time_ms=int(round(1000 * (time.perf_counter() - started)))))
    finally:
        if pool is not None:
            pool.shutdown()

    return RunResult(records, pending, True, trajectory, max_grad, max_step, max_steps)


def _single_epoch(cfg: ExperimentConfig) -> LocalConfig:
    base = cfg.local_config()
    return LocalConfig(epochs=1, lr=base.lr, batch_size=base.batch_size,
                       momentum=base.momentum, weight_decay=base.weight_decay,
                       seed=base.seed)


def run_local_mode(cfg: ExperimentConfig, federation: Federation | None = None) -> float:
    """Mean test accuracy of models trained in isolation on each client.

    The epoch budget ``cfg.local.epochs`` is spent one epoch per call, exactly
    as in :func:`run_cross_mode`, so the two modes coincide for one client.
    """
    fed = federation or build_federation(cfg)
    one_epoch = _single_epoch(cfg)
    w0 = init_params(fed.spec, cfg.seed)
    accs = []
    for client in fed.clients:
        w = w0
        for epoch in range(cfg.local.epochs):
            w = train_local(w, client, one_epoch, round_index=epoch).params
        accs.append(evaluate_accuracy(fed.spec, w, fed.test.X, fed.test.y))
    return float(np.mean(accs))


def run_cross_mode(cfg: ExperimentConfig, federation: Federation | None = None) -> float:
    """Test accuracy of one model carried through every client in turn.

    Each of the ``cfg.local.epochs`` passes visits all clients (by id, or in a
    fresh random order when ``cross_order == "random"``) for one epoch each.
    """
    fed = federation or build_federation(cfg)
    one_epoch = _single_epoch(cfg)
    w = init_params(fed.spec, cfg.seed)
    for epoch in range(cfg.local.epochs):
        order = list(range(len(fed.clients)))
        if cfg.cross_order == "random":
            order = list(server_rng(cfg.seed, epoch, _ORDER).permutation(len(order)))
        for i in order:
            w = train_local(w, fed.clients[i], one_epoch, round_index=epoch).params
    return evaluate_accuracy(fed.spec, w, fed.test.X, fed.test.y)


def write_records(path: str | Path, records: Sequence[RoundRecord], timing: bool = False) -> None:
    """Write one JSON object per round; wall time is zeroed unless ``timing``."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(r.to_json(timing) + "\n" for r in records))
    tmp.replace(path)


def read_records(path: str | Path) -> list[RoundRecord]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(RoundRecord(**json.loads(line)))
    return out
