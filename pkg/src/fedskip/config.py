"""Experiment configuration: dataclasses, JSON parsing and sweep expansion.

Every key in a config file must be known; defaults follow the usual
federated-vision setup (SGD lr 0.01, momentum 0.9, weight decay 1e-5,
batch 64, 10 local epochs).
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from fedskip.data import PartitionConfig, SyntheticConfig
from fedskip.local import LocalConfig
from fedskip.model import ModelSpec
from fedskip.server import StrategyConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


DATASET_KEYS = {
    "blobs": {"kind", "num_classes", "input_dim", "n_total", "class_sep", "seed"},
    "leaf": {"kind", "num_clients", "num_classes", "num_features", "alpha", "beta_gen",
             "size_mu", "size_sigma", "size_min", "test_fraction", "iid_model", "seed"},
    "tsv": {"kind", "path"},
}


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "blobs"
    # blobs
    num_classes: int = 5
    input_dim: int = 20
    n_total: int = 2500
    class_sep: float = 3.0
    # leaf
    num_clients: int = 212
    num_features: int = 60
    alpha: float = 1.0
    beta_gen: float = 1.0
    size_mu: float = 4.0
    size_sigma: float = 0.5
    size_min: int = 64
    test_fraction: float = 0.25
    iid_model: bool = False
    # tsv
    path: Optional[str] = None
    # None: use the experiment seed
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in DATASET_KEYS:
            raise ConfigError(f"dataset.kind: unknown dataset kind {self.kind!r}")
        if self.kind == "tsv" and not self.path:
            raise ConfigError("dataset.path: required for tsv datasets")
        if self.kind == "blobs" and self.n_total < 10 * self.num_classes:
            raise ConfigError("dataset.n_total: must be at least 10 * num_classes")

    def synthetic(self, seed: int) -> SyntheticConfig:
        return SyntheticConfig(
            num_clients=self.num_clients, num_classes=self.num_classes,
            num_features=self.num_features, alpha=self.alpha, beta_gen=self.beta_gen,
            size_mu=self.size_mu, size_sigma=self.size_sigma, min_samples=self.size_min,
            test_fraction=self.test_fraction, iid_model=self.iid_model,
            seed=seed if self.seed is None else self.seed)

    def to_dict(self) -> dict[str, Any]:
        full = dataclasses.asdict(self)
        return {k: full[k] for k in sorted(DATASET_KEYS[self.kind], key=list(full).index)}


@dataclass(frozen=True)
class ModelConfig:
    family: str = "linear-softmax"
    hidden_dim: int = 32
    activation: str = "sigmoid"

    def spec(self, input_dim: int, num_classes: int) -> ModelSpec:
        return ModelSpec(self.family, input_dim, num_classes,
                         self.hidden_dim if self.family == "mlp-1hidden" else 0,
                         self.activation)


@dataclass(frozen=True)
class PartitionSettings:
    beta: float = 0.5
    num_clients: int = 10


@dataclass(frozen=True)
class LocalSettings:
    epochs: int = 10
    lr: float = 0.01
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 1e-5


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    partition: PartitionSettings = field(default_factory=PartitionSettings)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    local: LocalSettings = field(default_factory=LocalSettings)
    rounds: int = 200
    sample_fraction: float = 1.0
    eval_every: int = 1
    seed: int = 0
    min_samples: int = 64
    target_accuracy: Optional[float] = None
    cross_order: str = "round-robin"

    def local_config(self) -> LocalConfig:
        mu = self.strategy.mu if self.strategy.kind == "fedprox" else 0.0
        return LocalConfig(epochs=self.local.epochs, lr=self.local.lr,
                           batch_size=self.local.batch_size, momentum=self.local.momentum,
                           weight_decay=self.local.weight_decay, prox_mu=mu, seed=self.seed)

    def partition_config(self) -> PartitionConfig:
        return PartitionConfig(self.partition.beta, self.partition.num_clients, self.seed)

    @property
    def data_seed(self) -> int:
        return self.seed if self.dataset.seed is None else self.dataset.seed

    def replace(self, **changes: Any) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset.to_dict(),
            "model": dataclasses.asdict(self.model),
            "partition": {"beta": _encode_float(self.partition.beta),
                          "num_clients": self.partition.num_clients},
            "strategy": _strategy_to_dict(self.strategy),
            "local": dataclasses.asdict(self.local),
            "rounds": self.rounds,
            "sample_fraction": self.sample_fraction,
            "eval_every": self.eval_every,
            "seed": self.seed,
            "min_samples": self.min_samples,
            "target_accuracy": self.target_accuracy,
            "cross_order": self.cross_order,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    strategies: tuple[StrategyConfig, ...]
    deltas: tuple[int, ...]
    betas: tuple[float, ...]
    seeds: tuple[int, ...]
    max_cells: int = 256

    def cells(self) -> list[ExperimentConfig]:
        """Cartesian product; ``deltas`` only multiply fedskip strategies."""
        out = []
        for beta, seed, strat in itertools.product(self.betas, self.seeds, self.strategies):
            deltas = self.deltas if strat.kind == "fedskip" else (strat.delta,)
            for delta in deltas:
                out.append(self.base.replace(
                    partition=dataclasses.replace(self.base.partition, beta=beta),
                    strategy=dataclasses.replace(strat, delta=delta),
                    seed=seed))
        if len(out) > self.max_cells:
            raise ConfigError(f"sweep: {len(out)} cells exceed max_cells={self.max_cells}")
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "base": self.base.to_dict(),
            "sweep": {
                "strategy": [_strategy_to_dict(s) for s in self.strategies],
                "delta": list(self.deltas),
                "beta": [_encode_float(b) for b in self.betas],
                "seed": list(self.seeds),
            },
            "max_cells": self.max_cells,
        }


def _encode_float(x: float) -> float | str:
    return "inf" if math.isinf(x) else x


def _strategy_to_dict(s: StrategyConfig) -> dict[str, Any]:
    out: dict[str, Any] = {"kind": s.kind}
    if s.kind == "fedprox":
        out["mu"] = s.mu
    if s.kind == "fedskip":
        out["delta"] = s.delta
    return out


# -- parsing -----------------------------------------------------------------

def _expect_keys(obj: Any, allowed: set[str], path: str) -> dict[str, Any]:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    for key in obj:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"{where}: unknown key")
    return obj


def _number(value: Any, path: str, *, integer: bool = False, allow_inf: bool = False) -> Any:
    if allow_inf and isinstance(value, str) and value.lower() in ("inf", "infinity"):
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number")
    if integer:
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{path}: expected an integer")
        return int(value)
    if math.isinf(value) and not allow_inf:
        raise ConfigError(f"{path}: must be finite")
    return float(value)


def _fields(cls, data: dict[str, Any], path: str, special: dict[str, Any] | None = None) -> dict:
    special = special or {}
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        where = f"{path}.{f.name}"
        if f.name in special:
            kwargs[f.name] = special[f.name](value, where)
        elif f.type in ("int",):
            kwargs[f.name] = _number(value, where, integer=True)
        elif f.type in ("float",):
            kwargs[f.name] = _number(value, where)
        elif f.type in ("bool",):
            if not isinstance(value, bool):
                raise ConfigError(f"{where}: expected a boolean")
            kwargs[f.name] = value
        elif f.type in ("str",):
            if not isinstance(value, str):
                raise ConfigError(f"{where}: expected a string")
            kwargs[f.name] = value
        else:
            kwargs[f.name] = value
    return kwargs


def _optional_int(value: Any, path: str) -> Optional[int]:
    return None if value is None else _number(value, path, integer=True)


def _optional_float(value: Any, path: str) -> Optional[float]:
    return None if value is None else _number(value, path)


def _optional_str(value: Any, path: str) -> Optional[str]:
    if value is not None and not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string")
    return value


def parse_strategy(obj: Any, path: str = "strategy") -> StrategyConfig:
    if isinstance(obj, str):
        obj = {"kind": obj}
    data = _expect_keys(obj, {"kind", "mu", "delta"}, path)
    kwargs = _fields(StrategyConfig, data, path)
    kind = kwargs.get("kind", "fedavg")
    if "mu" in kwargs and kind != "fedprox":
        raise ConfigError(f"{path}.mu: only valid for fedprox")
    if "delta" in kwargs and kind != "fedskip":
        raise ConfigError(f"{path}.delta: only valid for fedskip")
    if kind == "fedprox":
        kwargs.setdefault("mu", 0.001)
    if kind == "fedskip":
        kwargs.setdefault("delta", 3)
    try:
        strat = StrategyConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if strat.mu < 0:
        raise ConfigError(f"{path}.mu: must be non-negative")
    return strat


def parse_experiment(obj: Any, path: str = "") -> ExperimentConfig:
    allowed = {f.name for f in dataclasses.fields(ExperimentConfig)}
    data = _expect_keys(obj, allowed, path)
    p = (lambda name: f"{path}.{name}" if path else name)
    if "dataset" not in data:
        raise ConfigError(f"{p('dataset')}: required")

    ds = data["dataset"]
    ds_obj = _expect_keys(ds, set().union(*DATASET_KEYS.values()), p("dataset"))
    kind = ds_obj.get("kind", "blobs")
    if kind not in DATASET_KEYS:
        raise ConfigError(f"{p('dataset')}.kind: unknown dataset kind {kind!r}")
    _expect_keys(ds_obj, DATASET_KEYS[kind], p("dataset"))
    dataset = DatasetConfig(**_fields(DatasetConfig, ds_obj, p("dataset"),
                                      {"seed": _optional_int, "path": _optional_str}))

    model = ModelConfig(**_fields(ModelConfig, _expect_keys(
        data.get("model", {}), {f.name for f in dataclasses.fields(ModelConfig)}, p("model")),
        p("model")))
    part_data = _expect_keys(data.get("partition", {}), {"beta", "num_clients"}, p("partition"))
    partition = PartitionSettings(**_fields(
        PartitionSettings, part_data, p("partition"),
        {"beta": lambda v, w: _number(v, w, allow_inf=True)}))
    strategy = parse_strategy(data.get("strategy", {"kind": "fedavg"}), p("strategy"))
    local = LocalSettings(**_fields(LocalSettings, _expect_keys(
        data.get("local", {}), {f.name for f in dataclasses.fields(LocalSettings)}, p("local")),
        p("local")))
    top = _fields(ExperimentConfig, {k: v for k, v in data.items()
                                     if k not in ("dataset", "model", "partition",
                                                  "strategy", "local")},
                  path, {"target_accuracy": _optional_float})
    cfg = ExperimentConfig(dataset=dataset, model=model, partition=partition,
                           strategy=strategy, local=local, **top)
    validate(cfg, path)
    return cfg


def validate(cfg: ExperimentConfig, path: str = "") -> None:
    p = (lambda name: f"{path}.{name}" if path else name)
    checks = [
        (cfg.local.lr > 0, "local.lr", "must be positive"),
        (cfg.local.epochs >= 0, "local.epochs", "must be non-negative"),
        (cfg.local.batch_size >= 1, "local.batch_size", "must be at least 1"),
        (0 <= cfg.local.momentum < 1, "local.momentum", "must lie in [0, 1)"),
        (cfg.local.weight_decay >= 0, "local.weight_decay", "must be non-negative"),
        (cfg.partition.beta > 0, "partition.beta", "must be positive"),
        (cfg.partition.num_clients >= 1, "partition.num_clients", "must be positive"),
        (0 < cfg.sample_fraction <= 1, "sample_fraction", "must lie in (0, 1]"),
        (cfg.rounds >= 1, "rounds", "must be at least 1"),
        (cfg.eval_every >= 1, "eval_every", "must be at least 1"),
        (cfg.min_samples >= 1, "min_samples", "must be at least 1"),
        (cfg.cross_order in ("round-robin", "random"), "cross_order",
         "must be 'round-robin' or 'random'"),
        (cfg.model.family in ("linear-softmax", "mlp-1hidden"), "model.family",
         "must be linear-softmax or mlp-1hidden"),
        (cfg.model.activation in ("sigmoid", "relu"), "model.activation",
         "must be sigmoid or relu"),
        (cfg.model.hidden_dim >= 1, "model.hidden_dim", "must be positive"),
    ]
    if cfg.dataset.kind == "blobs":
        checks.append((cfg.sample_fraction * cfg.partition.num_clients >= 1,
                       "sample_fraction", "must select at least one client"))
    for ok, name, message in checks:
        if not ok:
            raise ConfigError(f"{p(name)}: {message}")


def parse_sweep(obj: Any) -> SweepSpec:
    data = _expect_keys(obj, {"base", "sweep", "max_cells"}, "")
    if "base" not in data or "sweep" not in data:
        raise ConfigError("sweep: a sweep file needs 'base' and 'sweep'")
    base = parse_experiment(data["base"], "base")
    grid = _expect_keys(data["sweep"], {"strategy", "delta", "beta", "seed"}, "sweep")

    def listed(name: str, default: list) -> list:
        values = grid.get(name, default)
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{name}: expected a non-empty list")
        return values

    strategies = tuple(parse_strategy(s, f"sweep.strategy[{i}]")
                       for i, s in enumerate(listed("strategy", [_strategy_to_dict(base.strategy)])))
    deltas = tuple(_number(v, f"sweep.delta[{i}]", integer=True)
                   for i, v in enumerate(listed("delta", [base.strategy.delta])))
    if any(d < 1 for d in deltas):
        raise ConfigError("sweep.delta: every delta must be >= 1")
    betas = tuple(_number(v, f"sweep.beta[{i}]", allow_inf=True)
                  for i, v in enumerate(listed("beta", [_encode_float(base.partition.beta)])))
    if any(not b > 0 for b in betas):
        raise ConfigError("sweep.beta: every beta must be positive")
    seeds = tuple(_number(v, f"sweep.seed[{i}]", integer=True)
                  for i, v in enumerate(listed("seed", [base.seed])))
    max_cells = _number(data.get("max_cells", 256), "max_cells", integer=True)
    spec = SweepSpec(base, strategies, deltas, betas, seeds, max_cells)
    spec.cells()
    return spec


def parse_config(path: str | Path) -> ExperimentConfig | SweepSpec:
    """Load an experiment or a sweep from a JSON file."""
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: malformed JSON ({exc})") from None
    if isinstance(obj, dict) and "sweep" in obj:
        return parse_sweep(obj)
    return parse_experiment(obj)
