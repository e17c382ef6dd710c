import pytest

from fedskip.config import DatasetConfig, ExperimentConfig, LocalSettings, PartitionSettings
from fedskip.server import StrategyConfig


def small_blob_config(strategy="fedavg", delta=1, beta=0.5, rounds=8, seed=0, **kw):
    """A few-second blob experiment for end-to-end tests."""
    strat = StrategyConfig(strategy, delta=delta, mu=kw.pop("mu", 0.0))
    return ExperimentConfig(
        dataset=DatasetConfig(kind="blobs", num_classes=4, input_dim=6, n_total=600,
                              class_sep=3.0, seed=0),
        partition=PartitionSettings(beta, kw.pop("num_clients", 6)),
        strategy=strat,
        local=LocalSettings(epochs=kw.pop("epochs", 2)),
        rounds=rounds, seed=seed, min_samples=1, **kw)


@pytest.fixture
def blob_config():
    return small_blob_config
