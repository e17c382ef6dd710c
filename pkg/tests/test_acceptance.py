"""Exit-gate checks. Each test prints one ``criterion N: PASS|FAIL`` line.

Run on its own with ``pytest tests/test_acceptance.py -v -s``.
"""

import math
from functools import lru_cache

import numpy as np

from fedskip.config import DatasetConfig, ExperimentConfig, LocalSettings, ModelConfig, PartitionSettings
from fedskip.metrics import baseline_reference, efficiency_summary, divergence_bound_check, mean_drift
from fedskip.model import Batch, ModelSpec, ParamVector, gradient, loss
from fedskip.server import StrategyConfig
from fedskip.simulation import (RoundRecord, _schedule, build_federation, run_cross_mode,
                                run_federated, run_local_mode, write_records)

from conftest import small_blob_config


def report(capsys, number: int, ok: bool, detail: str) -> None:
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")


def jsonl_bytes(tmp_path, name, records) -> bytes:
    path = tmp_path / f"{name}.jsonl"
    write_records(path, records)
    return path.read_bytes()


def blob_base(strategy: StrategyConfig, beta: float, seed: int, epochs: int, rounds: int = 1,
              **kw) -> ExperimentConfig:
    """Blobs with C=5, d=20 and 2000 training examples split over 10 clients."""
    return ExperimentConfig(
        dataset=DatasetConfig(kind="blobs", num_classes=5, input_dim=20, n_total=2500,
                              class_sep=3.0),
        partition=PartitionSettings(beta, 10), strategy=strategy,
        local=LocalSettings(epochs=epochs), rounds=rounds, seed=seed, min_samples=1, **kw)


def leaf_config(strategy: StrategyConfig, seed: int) -> ExperimentConfig:
    return ExperimentConfig(
        dataset=DatasetConfig(kind="leaf", num_clients=50),
        model=ModelConfig("linear-softmax"), partition=PartitionSettings(math.inf, 50),
        strategy=strategy, rounds=200, sample_fraction=0.2, seed=seed)


@lru_cache(maxsize=None)
def leaf_run(kind: str, seed: int, threads: int = 1):
    strat = StrategyConfig("fedskip", delta=3) if kind == "fedskip" else StrategyConfig("fedavg")
    return run_federated(leaf_config(strat, seed), threads=threads)


def test_criterion_1_delta_one_reduction(tmp_path, capsys):
    same = []
    for seed in (0, 1, 2):
        a = run_federated(small_blob_config("fedavg", rounds=10, seed=seed, sample_fraction=0.5))
        b = run_federated(small_blob_config("fedskip", delta=1, rounds=10, seed=seed,
                                            sample_fraction=0.5))
        same.append(jsonl_bytes(tmp_path, f"a{seed}", a.records)
                    == jsonl_bytes(tmp_path, f"b{seed}", b.records)
                    and a.final_params == b.final_params)
    report(capsys, 1, all(same), f"byte-identical per seed: {same}")
    assert all(same)


def _fd_check(spec: ModelSpec, rng: np.random.Generator, relu_guard: bool) -> float:
    n = int(rng.integers(1, 6))
    X = rng.normal(size=(n, spec.input_dim))
    batch = Batch(X, rng.integers(0, spec.num_classes, n))
    w = ParamVector(rng.normal(0, 0.5, spec.num_params), spec)
    if relu_guard:
        hidden = X @ w.values[:spec.hidden_dim * spec.input_dim].reshape(spec.hidden_dim, -1).T \
            + w.values[spec.hidden_dim * spec.input_dim:spec.hidden_dim * (spec.input_dim + 1)]
        if np.min(np.abs(hidden)) < 1e-3:
            return math.nan
    g = gradient(spec, w, batch).values
    i = int(rng.integers(spec.num_params))
    h = 1e-5
    up, down = w.values.copy(), w.values.copy()
    up[i] += h
    down[i] -= h
    fd = (loss(spec, ParamVector(up, spec), batch) - loss(spec, ParamVector(down, spec), batch)) / (2 * h)
    return abs(g[i] - fd) / max(abs(g[i]), abs(fd), 1e-4)


def test_criterion_2_gradients(capsys):
    families = {
        "linear-softmax": ModelSpec("linear-softmax", 4, 3),
        "mlp-sigmoid": ModelSpec("mlp-1hidden", 4, 3, hidden_dim=5, activation="sigmoid"),
        "mlp-relu": ModelSpec("mlp-1hidden", 4, 3, hidden_dim=5, activation="relu"),
    }
    worst = {}
    for name, spec in families.items():
        rng = np.random.default_rng(2)
        errors = []
        while len(errors) < 100:
            err = _fd_check(spec, rng, spec.activation == "relu" and spec.hidden_dim > 0)
            if not math.isnan(err):
                errors.append(err)
        worst[name] = max(errors)
    ok = all(v <= 1e-4 for v in worst.values())
    report(capsys, 2, ok, ", ".join(f"{k} max rel err {v:.1e}" for k, v in worst.items()))
    assert ok


def test_criterion_3_cross_beats_local(capsys):
    gaps = []
    for seed in range(5):
        cfg = blob_base(StrategyConfig("fedavg"), 0.5, seed, epochs=20)
        fed = build_federation(cfg)
        assert sum(c.n_samples for c in fed.clients) == 2000
        gaps.append((run_local_mode(cfg, fed), run_cross_mode(cfg, fed)))
    local, cross = np.mean(gaps, axis=0)
    ok = cross >= local + 0.05
    report(capsys, 3, ok, f"local {local:.3f} cross {cross:.3f} over 5 seeds")
    assert ok


def test_criterion_4_drift_trend(capsys):
    betas = (0.1, 0.5, math.inf)
    drift = {}
    for beta in betas:
        drift[beta] = np.mean([
            mean_drift(run_federated(blob_base(StrategyConfig("fedavg"), beta, seed,
                                               epochs=10, rounds=50)).records)
            for seed in range(5)])
    ok = drift[0.1] < drift[0.5] < drift[math.inf]
    report(capsys, 4, ok, "mean drift " + ", ".join(f"beta={b}: {drift[b]:.3f}" for b in betas))
    assert ok


def test_criterion_5_fedskip_vs_fedavg(capsys):
    pairs = [(leaf_run("fedavg", s).best_accuracy(), leaf_run("fedskip", s).best_accuracy())
             for s in range(3)]
    ok = all(skip >= avg - 0.005 for avg, skip in pairs)
    report(capsys, 5, ok, "; ".join(f"seed {i}: fedavg {a:.4f} fedskip-3 {b:.4f}"
                                   for i, (a, b) in enumerate(pairs)))
    assert ok


def test_criterion_6_efficiency_accounting(capsys):
    counts = {}
    for delta in (3, 5, 7, 10):
        cfg = small_blob_config("fedskip", delta=delta, rounds=200, epochs=0, eval_every=200)
        recorded = run_federated(cfg).records[-1].aggregations_so_far
        # Direct enumeration: round 0 plus every round outside the skip set.
        skip = {t for t in range(200) if 1 < t < 200 and t % delta != 0}
        counts[delta] = (recorded, sum(1 for t in range(200) if t not in skip))

    def fixture(hit_round, n=200):
        return [RoundRecord(t, "aggregate", 0.7 if t >= hit_round else 0.5, 0.0, t + 1, t + 1)
                for t in range(n)]

    baseline = fixture(199)
    target, rounds = baseline_reference(baseline)
    speedups = {h: efficiency_summary(fixture(h), target, rounds).speedup_vs_baseline
                for h in (32, 99, 199)}
    ok = (all(a == b for a, b in counts.values())
          and speedups == {32: 200 / 33, 99: 2.0, 199: 1.0})
    report(capsys, 6, ok, f"aggregations {counts}; speedups {speedups}")
    assert ok


def test_criterion_7_divergence_bound(capsys):
    cfg = blob_base(StrategyConfig("fedskip", delta=5), 0.5, 0, epochs=2, rounds=100)
    assert cfg.local.lr == 0.01 and cfg.sample_fraction == 1.0
    result = run_federated(cfg, keep_trajectory=True)
    report_ = divergence_bound_check(result.trajectory, _schedule(cfg), cfg.local_config(),
                                     result.max_steps, result.max_grad_norm)
    ok = report_.holds and len(report_.lhs) > 0
    report(capsys, 7, ok, f"max lhs {max(report_.lhs):.4g} <= rhs {report_.rhs:.4g} "
                          f"at {len(report_.lhs)} points (G={report_.grad_bound:.3g}, "
                          f"E={report_.steps_per_call})")
    assert ok


def test_criterion_8_strategy_sanity(tmp_path, capsys):
    base = dict(rounds=6, sample_fraction=0.5, seed=3)
    avg = run_federated(small_blob_config("fedavg", **base), keep_trajectory=True)
    prox = run_federated(small_blob_config("fedprox", mu=0.0, **base))
    prox_ok = (jsonl_bytes(tmp_path, "avg", avg.records) == jsonl_bytes(tmp_path, "prox", prox.records)
               and avg.final_params == prox.final_params)

    # Equal steps: same-size clients and batch size dividing the client size.
    equal = small_blob_config("fednova", rounds=6, num_clients=6, beta=math.inf, **{
        k: v for k, v in base.items() if k != "rounds"})
    equal = equal.replace(local=LocalSettings(epochs=2, batch_size=20))
    nova = run_federated(equal)
    avg_equal = run_federated(equal.replace(strategy=StrategyConfig("fedavg")))
    nova_err = float(np.max(np.abs(nova.final_params.values - avg_equal.final_params.values)))
    nova_ok = nova_err <= 1e-10

    scaffold = run_federated(small_blob_config("scaffold", **base), keep_trajectory=True)

    def first_round(run):
        return [s.models for s in run.trajectory if s.round == 0], run.records[0]

    scaffold_ok = first_round(scaffold) == first_round(avg)
    ok = prox_ok and nova_ok and scaffold_ok
    report(capsys, 8, ok, f"fedprox mu=0 identical {prox_ok}; fednova max err {nova_err:.1e}; "
                          f"scaffold first round identical {scaffold_ok}")
    assert ok


def test_criterion_9_thread_determinism(tmp_path, capsys):
    one = leaf_run("fedskip", 0)
    eight = leaf_run("fedskip", 0, threads=8)
    ok = (jsonl_bytes(tmp_path, "t1", one.records) == jsonl_bytes(tmp_path, "t8", eight.records)
          and one.final_params == eight.final_params)
    report(capsys, 9, ok, "threads 1 vs 8 on the LEAF-style config")
    assert ok
