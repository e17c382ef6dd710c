"""Server-side steps: aggregation rules, the skip schedule and shuffle-scatter."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fedskip.data import ClientDataset
from fedskip.local import LocalResult
from fedskip.model import ParamVector

STRATEGIES = ("fedavg", "fedprox", "scaffold", "fednova", "fedskip")


@dataclass(frozen=True)
class SkipSchedule:
    delta: int
    total_rounds: int

    def __post_init__(self) -> None:
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.total_rounds < 0:
            raise ValueError("total_rounds must be non-negative")

    def skip_rounds(self) -> list[int]:
        return [t for t in range(self.total_rounds) if is_skip_round(t, self)]


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "fedavg"
    mu: float = 0.0
    delta: int = 1

    def __post_init__(self) -> None:
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")

    @property
    def label(self) -> str:
        if self.kind == "fedskip":
            return f"fedskip-{self.delta}"
        return self.kind


@dataclass
class SampleLedger:
    """Sample counts consumed by each model slot since the last aggregation.

    ``slots[k][n]`` is the number of samples slot ``k`` trained on in the
    ``n``-th round of the current period. Rows travel with their models when
    the server shuffles.
    """

    slots: list[list[int]] = field(default_factory=list)

    @classmethod
    def empty(cls, num_slots: int) -> SampleLedger:
        return cls([[] for _ in range(num_slots)])

    def record(self, counts: Sequence[int]) -> None:
        if len(counts) != len(self.slots):
            raise ValueError("one count per slot is required")
        if any(int(n) <= 0 for n in counts):
            raise ValueError("sample counts must be positive")
        for row, n in zip(self.slots, counts):
            row.append(int(n))

    def permute(self, order: Sequence[int]) -> None:
        self.slots = [self.slots[i] for i in order]

    def reset(self) -> None:
        self.slots = [[] for _ in self.slots]

    @property
    def period_length(self) -> int:
        return len(self.slots[0]) if self.slots else 0


def is_skip_round(t: int, schedule: SkipSchedule) -> bool:
    return 1 < t < schedule.total_rounds and t % schedule.delta != 0


def weighted_average(models: Sequence[ParamVector], weights: Sequence[float],
                     tol: float = 1e-9) -> ParamVector:
    """Coordinate-wise ``sum_k p_k w_k``, accumulated in list order.

    Evaluated as ``w_0 + sum_k p_k (w_k - w_0)`` so that a combination of
    identical models returns that model bit-for-bit.
    """
    if not models or len(models) != len(weights):
        raise ValueError("need one weight per model and at least one model")
    if any(w < 0 for w in weights) or abs(sum(weights) - 1.0) > tol:
        raise ValueError("weights must be non-negative and sum to 1")
    spec = models[0].spec
    if any(m.spec != spec for m in models):
        raise ValueError("parameter layouts differ")
    base = models[0].values
    acc = base.copy()
    for m, p in zip(models[1:], weights[1:]):
        acc = acc + p * (m.values - base)
    return ParamVector(acc, spec)


def fedavg_weights(clients: Sequence[ClientDataset]) -> list[float]:
    sizes = [c.n_samples for c in clients]
    total = sum(sizes)
    return [n / total for n in sizes]


def cumulative_weights(ledger: SampleLedger) -> list[float]:
    """Aggregation weights from the samples each slot used this period."""
    if not ledger.slots or ledger.period_length == 0:
        raise ValueError("ledger is empty")
    if any(len(row) != ledger.period_length for row in ledger.slots):
        raise ValueError("ledger rows have unequal lengths")
    per_slot = [sum(row) for row in ledger.slots]
    total = sum(per_slot)
    return [n / total for n in per_slot]


def shuffle_permutation(n: int, rng: np.random.Generator) -> list[int]:
    """Fisher-Yates permutation of ``range(n)``."""
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order


def shuffle_scatter(models: Sequence[ParamVector], rng: np.random.Generator) -> list[ParamVector]:
    if not models:
        raise ValueError("nothing to shuffle")
    return [models[i] for i in shuffle_permutation(len(models), rng)]


def fednova_aggregate(global_params: ParamVector, results: Sequence[LocalResult],
                      weights: Sequence[float]) -> ParamVector:
    """Normalized averaging: rescale the mean per-step update by ``tau_eff``."""
    if any(r.steps_taken <= 0 for r in results):
        raise ValueError("FedNova needs every client to take at least one step")
    # global - tau_eff * sum_k p_k (global - w_k) / tau_k, rewritten as a
    # weighted average of w_k + (1 - tau_eff / tau_k) (global - w_k).
    g = global_params.values
    tau_eff = 0.0
    for r, p in zip(results, weights):
        tau_eff += p * r.steps_taken
    corrected = []
    for r in results:
        w = r.params.values
        corrected.append(ParamVector(w + (1.0 - tau_eff / r.steps_taken) * (g - w),
                                     global_params.spec))
    return weighted_average(corrected, weights)


def scaffold_server_update(c_global: ParamVector, control_deltas: Sequence[ParamVector],
                           participation_fraction: float) -> ParamVector:
    if not control_deltas:
        return c_global
    mean = control_deltas[0].values.copy()
    for d in control_deltas[1:]:
        if d.spec != c_global.spec:
            raise ValueError("parameter layouts differ")
        mean = mean + d.values
    mean = mean / len(control_deltas)
    return ParamVector(c_global.values + participation_fraction * mean, c_global.spec)
