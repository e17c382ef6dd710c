"""Dataset generators, the Dirichlet label partitioner and TSV storage."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from fedskip.model import Batch, Example


@dataclass(frozen=True, eq=False)
class Dataset:
    """Labelled examples stored column-wise."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError("expected X of shape (n, d) and y of shape (n,)")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.X.shape[0]

    def __iter__(self) -> Iterator[Example]:
        for x, label in zip(self.X, self.y):
            yield Example(x, int(label))

    def as_batch(self) -> Batch:
        return Batch(self.X, self.y)

    @classmethod
    def from_examples(cls, examples: Sequence[Example]) -> Dataset:
        batch = Batch.from_examples(examples)
        return cls(batch.X, batch.y)


@dataclass(frozen=True, eq=False)
class ClientDataset:
    client_id: int
    train: Dataset

    @property
    def n_samples(self) -> int:
        return len(self.train)


@dataclass(frozen=True)
class PartitionConfig:
    beta: float
    num_clients: int
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ValueError("beta must be positive (use inf for IID)")
        if self.num_clients < 1:
            raise ValueError("num_clients must be positive")


@dataclass(frozen=True)
class SyntheticConfig:
    """LEAF-style synthetic(alpha, beta) generator settings.

    Train sizes are ``floor(LogNormal(size_mu, size_sigma)) + min_samples``;
    every client additionally draws ``test_fraction`` as many held-out
    examples, pooled into the shared test set.
    """

    num_clients: int = 212
    num_classes: int = 5
    num_features: int = 60
    alpha: float = 1.0
    beta_gen: float = 1.0
    size_mu: float = 4.0
    size_sigma: float = 0.5
    min_samples: int = 64
    test_fraction: float = 0.25
    iid_model: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.num_clients, self.num_classes, self.num_features) < 1:
            raise ValueError("counts must be positive")
        if self.alpha < 0 or self.beta_gen < 0 or self.size_sigma < 0:
            raise ValueError("alpha, beta_gen and size_sigma must be non-negative")
        if self.min_samples < 0 or self.test_fraction < 0:
            raise ValueError("min_samples and test_fraction must be non-negative")


class PartitionError(RuntimeError):
    """Raised when a Dirichlet draw keeps leaving some client empty."""


def generate_blobs(num_classes: int, input_dim: int, n_total: int,
                   class_sep: float, seed: int) -> tuple[Dataset, Dataset]:
    """Unit-covariance Gaussian class clusters, split 80/20 into train/test.

    Class means sit on scaled coordinate axes so every pair of means is exactly
    ``class_sep`` apart; when ``input_dim < num_classes`` they are placed on the
    first axis at spacing ``class_sep`` instead.
    """
    if n_total < 10 * num_classes:
        raise ValueError("n_total must be at least 10 * num_classes")
    rng = np.random.default_rng(seed)
    means = np.zeros((num_classes, input_dim))
    if input_dim >= num_classes:
        means[np.arange(num_classes), np.arange(num_classes)] = class_sep / math.sqrt(2.0)
    else:
        means[:, 0] = class_sep * np.arange(num_classes)
    y = rng.permutation(np.arange(n_total) % num_classes)
    X = means[y] + rng.standard_normal((n_total, input_dim))
    n_train = int(round(0.8 * n_total))
    return Dataset(X[:n_train], y[:n_train]), Dataset(X[n_train:], y[n_train:])


def _softmax_argmax(W: np.ndarray, b: np.ndarray, X: np.ndarray) -> np.ndarray:
    # softmax is monotone, so the argmax of the logits is the label.
    return np.argmax(X @ W.T + b, axis=1)


def generate_synthetic_leaf(cfg: SyntheticConfig) -> tuple[list[ClientDataset], Dataset]:
    rng = np.random.default_rng(cfg.seed)
    d, c = cfg.num_features, cfg.num_classes
    cov_diag = np.arange(1, d + 1, dtype=np.float64) ** -1.2
    sizes = np.floor(rng.lognormal(cfg.size_mu, cfg.size_sigma, cfg.num_clients)).astype(int)
    sizes += cfg.min_samples

    def draw_model(u: float) -> tuple[np.ndarray, np.ndarray]:
        return rng.normal(u, 1.0, size=(c, d)), rng.normal(u, 1.0, size=c)

    if cfg.iid_model:
        shared_u = rng.normal(0.0, cfg.alpha)
        shared_v = rng.normal(rng.normal(0.0, cfg.beta_gen), 1.0, size=d)
        shared_model = draw_model(shared_u)

    clients: list[ClientDataset] = []
    test_X, test_y = [], []
    for k in range(cfg.num_clients):
        if cfg.iid_model:
            v = shared_v
            W, b = shared_model
        else:
            u = rng.normal(0.0, cfg.alpha)
            v = rng.normal(rng.normal(0.0, cfg.beta_gen), 1.0, size=d)
            W, b = draw_model(u)
        n_train = int(sizes[k])
        n_test = int(math.ceil(cfg.test_fraction * n_train))
        X = v + rng.standard_normal((n_train + n_test, d)) * np.sqrt(cov_diag)
        y = _softmax_argmax(W, b, X)
        clients.append(ClientDataset(k, Dataset(X[:n_train], y[:n_train])))
        test_X.append(X[n_train:])
        test_y.append(y[n_train:])
    return clients, Dataset(np.concatenate(test_X), np.concatenate(test_y))


def dirichlet_partition(train: Dataset, cfg: PartitionConfig,
                        max_redraws: int = 100) -> list[ClientDataset]:
    """Split ``train`` across clients with per-label Dirichlet proportions.

    ``beta = inf`` deals every label out round-robin instead (a running offset
    carries across labels so client sizes stay balanced).
    """
    labels = np.unique(train.y)
    num_clients = cfg.num_clients
    rng = np.random.default_rng(cfg.seed)
    by_label = [rng.permutation(np.flatnonzero(train.y == lab)) for lab in labels]

    if math.isinf(cfg.beta):
        owners: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
        offset = 0
        for idx in by_label:
            slots = (offset + np.arange(idx.size)) % num_clients
            for j in range(num_clients):
                owners[j].append(idx[slots == j])
            offset = (offset + idx.size) % num_clients
        return _assemble(train, owners)

    for _ in range(max_redraws + 1):
        owners = [[] for _ in range(num_clients)]
        for idx in by_label:
            props = rng.dirichlet(np.full(num_clients, cfg.beta))
            counts = rng.multinomial(idx.size, props)
            cuts = np.cumsum(counts)[:-1]
            for j, part in enumerate(np.split(idx, cuts)):
                owners[j].append(part)
        if all(sum(p.size for p in parts) > 0 for parts in owners):
            return _assemble(train, owners)
    raise PartitionError(
        f"some client stayed empty after {max_redraws} redraws "
        f"(beta={cfg.beta}, num_clients={num_clients})")


def _assemble(train: Dataset, owners: list[list[np.ndarray]]) -> list[ClientDataset]:
    clients = []
    for j, parts in enumerate(owners):
        idx = np.sort(np.concatenate(parts)) if parts else np.array([], dtype=np.int64)
        clients.append(ClientDataset(j, Dataset(train.X[idx].reshape(-1, train.X.shape[1]),
                                                train.y[idx])))
    return clients


def filter_min_samples(clients: Sequence[ClientDataset], minimum: int = 64) -> list[ClientDataset]:
    kept = [c for c in clients if c.n_samples >= minimum]
    if not kept:
        raise ValueError(f"no client has at least {minimum} samples")
    return kept


def label_histogram(client: ClientDataset, num_classes: int) -> np.ndarray:
    return np.bincount(client.train.y, minlength=num_classes)


# TSV storage: one example per line, comma-separated features, a tab, the label.

def write_tsv(path: str | Path, data: Dataset) -> None:
    lines = []
    for x, label in zip(data.X, data.y):
        lines.append(",".join(repr(float(v)) for v in x) + "\t" + str(int(label)))
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_tsv(path: str | Path) -> Dataset:
    X, y = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            feats, label = line.split("\t")
            X.append([float(v) for v in feats.split(",")])
            y.append(int(label))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed example line") from exc
    if not X:
        raise ValueError(f"{path}: no examples")
    return Dataset(np.array(X), np.array(y))


def save_clients(directory: str | Path, clients: Sequence[ClientDataset],
                 test: Dataset | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for client in clients:
        write_tsv(directory / f"client_{client.client_id}.tsv", client.train)
    if test is not None:
        write_tsv(directory / "test.tsv", test)


def load_clients(directory: str | Path) -> tuple[list[ClientDataset], Dataset | None]:
    directory = Path(directory)
    files = sorted(directory.glob("client_*.tsv"), key=lambda p: int(p.stem.split("_", 1)[1]))
    if not files:
        raise FileNotFoundError(f"no client_<id>.tsv files in {directory}")
    clients = [ClientDataset(int(p.stem.split("_", 1)[1]), read_tsv(p)) for p in files]
    test_path = directory / "test.tsv"
    return clients, (read_tsv(test_path) if test_path.exists() else None)
