"""Client-side mini-batch SGD with optional FedProx and SCAFFOLD corrections."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from fedskip.data import ClientDataset, Dataset
from fedskip.model import Batch, ParamVector, loss_and_grad


class DivergenceError(RuntimeError):
    """Local training produced non-finite parameters."""

    def __init__(self, message: str, round_index: int | None = None,
                 client_id: int | None = None):
        super().__init__(message)
        self.round_index = round_index
        self.client_id = client_id


@dataclass(frozen=True)
class LocalConfig:
    epochs: int = 10
    lr: float = 0.01
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 1e-5
    prox_mu: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.weight_decay < 0 or self.prox_mu < 0:
            raise ValueError("weight_decay and prox_mu must be non-negative")


@dataclass(frozen=True)
class LocalResult:
    params: ParamVector
    steps_taken: int
    samples_seen: int
    control_delta: Optional[ParamVector] = None
    # Largest raw mini-batch gradient norm and largest applied update
    # direction norm (update / lr) seen during the call.
    max_grad_norm: float = 0.0
    max_step_norm: float = 0.0


def client_rng(seed: int, round_index: int, client_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, round_index, client_id])


def make_batches(data: Dataset, batch_size: int, rng: np.random.Generator) -> list[Batch]:
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    order = rng.permutation(len(data))
    return [Batch(data.X[order[i:i + batch_size]], data.y[order[i:i + batch_size]])
            for i in range(0, len(data), batch_size)]


def train_local(start: ParamVector, data: ClientDataset, cfg: LocalConfig,
                anchor: ParamVector | None = None,
                controls: tuple[ParamVector, ParamVector] | None = None,
                round_index: int = 0) -> LocalResult:
    """Run ``cfg.epochs`` epochs of momentum SGD from ``start``.

    Per step the applied direction is ``grad + wd*w + mu*(w - anchor) +
    (c_global - c_k)``, accumulated into a heavy-ball buffer that is reset on
    every call. With ``controls`` the option-II SCAFFOLD control delta is
    returned as well.
    """
    spec = start.spec
    if cfg.prox_mu > 0 and anchor is None:
        raise ValueError("prox_mu > 0 requires an anchor")
    rng = client_rng(cfg.seed, round_index, data.client_id)
    w = start.values.copy()
    buf = np.zeros_like(w)
    correction = None
    if controls is not None:
        correction = controls[0].values - controls[1].values
    anchor_w = anchor.values if anchor is not None else None

    steps = 0
    max_grad = 0.0
    max_step = 0.0
    for _ in range(cfg.epochs):
        for batch in make_batches(data.train, cfg.batch_size, rng):
            _, g = loss_and_grad(spec, w, batch.X, batch.y)
            max_grad = max(max_grad, float(np.linalg.norm(g)))
            if cfg.weight_decay:
                g = g + cfg.weight_decay * w
            if cfg.prox_mu > 0:
                g = g + cfg.prox_mu * (w - anchor_w)
            if correction is not None:
                g = g + correction
            if cfg.momentum:
                buf = cfg.momentum * buf + g
                g = buf
            max_step = max(max_step, float(np.linalg.norm(g)))
            w = w - cfg.lr * g
            steps += 1
        if not np.all(np.isfinite(w)):
            raise DivergenceError(
                f"client {data.client_id} diverged in round {round_index}",
                round_index, data.client_id)

    if not math.isfinite(max_step):
        raise DivergenceError(
            f"client {data.client_id} diverged in round {round_index}",
            round_index, data.client_id)
    params = ParamVector(w, spec)
    control_delta = None
    if controls is not None and steps > 0:
        drift = (start.values - w) / (cfg.lr * steps)
        control_delta = ParamVector(drift - controls[0].values, spec)
    elif controls is not None:
        control_delta = ParamVector.zeros(spec)
    return LocalResult(params, steps, cfg.epochs * data.n_samples, control_delta,
                       max_grad, max_step)
