from collections import Counter

import numpy as np
import pytest

from fedskip.data import ClientDataset
from fedskip.local import DivergenceError, train_local
from fedskip.model import init_params
from fedskip.server import SkipSchedule, is_skip_round
from fedskip.simulation import (build_federation, read_records, run_cross_mode, run_federated,
                                run_local_mode, sample_clients, write_records)


def test_fedskip_delta_one_equals_fedavg(blob_config, tmp_path):
    a = run_federated(blob_config("fedavg", rounds=6, sample_fraction=0.5))
    b = run_federated(blob_config("fedskip", delta=1, rounds=6, sample_fraction=0.5))
    write_records(tmp_path / "a.jsonl", a.records)
    write_records(tmp_path / "b.jsonl", b.records)
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert a.final_params == b.final_params


@pytest.mark.parametrize("strategy", ["fedavg", "fedskip", "fednova", "fedprox"])
def test_single_client_chains_local_training(blob_config, strategy):
    cfg = blob_config(strategy, delta=3, rounds=5, num_clients=1, mu=0.01 if strategy == "fedprox" else 0.0)
    fed = build_federation(cfg)
    result = run_federated(cfg, federation=fed)
    w = init_params(fed.spec, cfg.seed)
    for t in range(cfg.rounds):
        w = train_local(w, fed.clients[0], cfg.local_config(), anchor=w, round_index=t).params
    np.testing.assert_allclose(result.final_params.values, w.values, rtol=0, atol=1e-12)


def test_aggregation_count_matches_schedule(blob_config):
    cfg = blob_config("fedskip", delta=5, rounds=200, epochs=0, eval_every=50)
    result = run_federated(cfg)
    expected = cfg.rounds - len(SkipSchedule(5, 200).skip_rounds())
    assert result.records[-1].aggregations_so_far == expected


def test_record_consistency(blob_config):
    cfg = blob_config("fedskip", delta=3, rounds=12, sample_fraction=0.5, eval_every=4)
    records = run_federated(cfg).records
    schedule = SkipSchedule(3, 12)
    prev = 0
    for r in records:
        assert r.comm_rounds_so_far == r.round + 1
        assert (r.action == "skip") == is_skip_round(r.round, schedule)
        assert r.aggregations_so_far - prev == (0 if r.action == "skip" else 1)
        prev = r.aggregations_so_far
        assert (r.test_accuracy is not None) == (r.round % 4 == 0 or r.round == 11)
        assert r.drift_variance >= 0
    assert records[0].action == "init"


def test_skip_rounds_conserve_models(blob_config):
    cfg = blob_config("fedskip", delta=4, rounds=8, sample_fraction=0.5)
    snaps = run_federated(cfg, keep_trajectory=True).trajectory
    trained = {s.round: s.models for s in snaps if s.stage == "trained"}
    for s in snaps:
        if s.stage == "distributed" and is_skip_round(s.round, SkipSchedule(4, 8)):
            assert Counter(s.models) == Counter(trained[s.round - 1])


def test_skip_weights_follow_models(blob_config):
    cfg = blob_config("fedskip", delta=4, rounds=4, sample_fraction=0.5)
    snaps = run_federated(cfg, keep_trajectory=True).trajectory
    by_key = {(s.round, s.stage): s for s in snaps}
    before, after = by_key[(1, "trained")], by_key[(2, "distributed")]
    lookup = dict(zip(before.models, before.weights))
    assert [lookup[m] for m in after.models] == after.weights


def test_determinism_across_threads(blob_config, tmp_path):
    cfg = blob_config("fedskip", delta=3, rounds=6, sample_fraction=0.5)
    one = run_federated(cfg, threads=1)
    four = run_federated(cfg, threads=4)
    write_records(tmp_path / "1.jsonl", one.records)
    write_records(tmp_path / "4.jsonl", four.records)
    assert (tmp_path / "1.jsonl").read_bytes() == (tmp_path / "4.jsonl").read_bytes()
    assert one.final_params == four.final_params


def test_records_round_trip(blob_config, tmp_path):
    records = run_federated(blob_config(rounds=3)).records
    write_records(tmp_path / "r.jsonl", records)
    loaded = read_records(tmp_path / "r.jsonl")
    assert [r.test_accuracy for r in loaded] == [r.test_accuracy for r in records]
    assert all(r.wall_time_ms == 0 for r in loaded)
    assert set(vars(loaded[0])) == {"round", "action", "test_accuracy", "drift_variance",
                                    "aggregations_so_far", "comm_rounds_so_far", "wall_time_ms"}


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_identifies_round_and_client(blob_config):
    cfg = blob_config(rounds=3)
    cfg = cfg.replace(local=type(cfg.local)(epochs=1, lr=1e300, momentum=0.9))
    with pytest.raises(DivergenceError) as info:
        run_federated(cfg)
    assert info.value.round_index is not None and info.value.client_id is not None


def _clients(n):
    return [ClientDataset(i, None) for i in range(n)]


def test_sample_all_clients_in_order():
    clients = _clients(7)
    assert sample_clients(clients, 1.0, np.random.default_rng(0)) == clients


def test_sample_twenty_percent():
    picked = sample_clients(_clients(100), 0.2, np.random.default_rng(1))
    assert len(picked) == 20 and len({c.client_id for c in picked}) == 20


def test_sample_deterministic_and_at_least_one():
    a = sample_clients(_clients(30), 0.3, np.random.default_rng(9))
    b = sample_clients(_clients(30), 0.3, np.random.default_rng(9))
    assert [c.client_id for c in a] == [c.client_id for c in b]
    assert len(sample_clients(_clients(3), 0.01, np.random.default_rng(0))) == 1


def test_toy_modes_single_client_agree(blob_config):
    cfg = blob_config(num_clients=1, epochs=3)
    fed = build_federation(cfg)
    assert run_local_mode(cfg, fed) == run_cross_mode(cfg, fed)


def test_cross_mode_zero_budget_is_initializer(blob_config):
    from fedskip.model import evaluate_accuracy
    cfg = blob_config(epochs=0)
    fed = build_federation(cfg)
    w0 = init_params(fed.spec, cfg.seed)
    assert run_cross_mode(cfg, fed) == evaluate_accuracy(fed.spec, w0, fed.test.X, fed.test.y)


def test_toy_iid_local_close_to_cross(blob_config):
    # Both modes need a converged budget for the comparison to mean anything.
    cfg = blob_config(beta=float("inf"), num_clients=4, epochs=300)
    fed = build_federation(cfg)
    assert abs(run_local_mode(cfg, fed) - run_cross_mode(cfg, fed)) <= 0.05


def test_toy_heterogeneous_cross_beats_local(blob_config):
    gaps = []
    for seed in range(3):
        cfg = blob_config(beta=0.5, num_clients=6, epochs=10, seed=seed)
        fed = build_federation(cfg)
        gaps.append(run_cross_mode(cfg, fed) - run_local_mode(cfg, fed))
    assert np.mean(gaps) >= 0.05


def test_scaffold_and_fednova_run(blob_config):
    for kind in ("scaffold", "fednova"):
        result = run_federated(blob_config(kind, rounds=5, sample_fraction=0.5))
        assert 0.0 <= result.best_accuracy() <= 1.0
