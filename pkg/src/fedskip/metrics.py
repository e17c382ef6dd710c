"""Diagnostics: client drift, non-IID degree, divergence bound and efficiency."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from fedskip.data import ClientDataset
from fedskip.local import LocalConfig, make_batches
from fedskip.model import ModelSpec, ParamVector, loss_and_grad
from fedskip.server import SkipSchedule, weighted_average

if TYPE_CHECKING:
    from fedskip.simulation import RoundRecord, Snapshot

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["strategy", "delta", "beta", "seed", "final_accuracy", "rounds_to_target",
                   "aggregations_to_target", "speedup", "mean_drift_variance", "gamma"]


def client_drift_variance(models: Sequence[ParamVector], weights: Sequence[float]) -> float:
    """Weighted mean squared distance of the models from their weighted mean."""
    center = weighted_average(models, weights).values
    total = 0.0
    for m, p in zip(models, weights):
        diff = m.values - center
        total += p * float(diff @ diff)
    return total


# -- non-IID degree ------------------------------------------------------------

@dataclass(frozen=True)
class GammaEstimate:
    gamma: float
    raw: float
    clamped: bool
    global_min: float
    client_mins: tuple[float, ...]
    converged: bool

    def __float__(self) -> float:
        return self.gamma


def _minimize(spec: ModelSpec, parts: Sequence[tuple[float, ClientDataset]], l2: float,
              budget: int) -> tuple[float, bool]:
    def objective(w: np.ndarray) -> tuple[float, np.ndarray]:
        value = 0.0
        grad = np.zeros_like(w)
        for p, client in parts:
            f, g = loss_and_grad(spec, w, client.train.X, client.train.y)
            value += p * (f + 0.5 * l2 * float(w @ w))
            grad = grad + p * (g + l2 * w)
        return value, grad

    res = minimize(objective, np.zeros(spec.num_params), jac=True, method="L-BFGS-B",
                   options={"maxiter": budget, "gtol": 1e-10, "ftol": 0.0})
    _, g = objective(res.x)
    return float(res.fun), bool(np.linalg.norm(g) < 1e-4)


def estimate_gamma(clients: Sequence[ClientDataset], weights: Sequence[float], spec: ModelSpec,
                   budget: int = 500, l2: float = 1e-3) -> GammaEstimate:
    """Estimate ``F* - sum_k p_k F_k*`` by minimizing each objective with L-BFGS.

    Objectives are mean cross-entropy plus ``l2/2 ||w||^2``; the ridge keeps
    the minima finite on separable clients. Negative estimates are clamped to
    zero and logged.
    """
    if spec.family != "linear-softmax":
        raise ValueError("estimate_gamma needs a convex (linear-softmax) model")
    client_mins = []
    converged = True
    for client in clients:
        value, ok = _minimize(spec, [(1.0, client)], l2, budget)
        client_mins.append(value)
        converged &= ok
    global_min, ok = _minimize(spec, list(zip(weights, clients)), l2, budget)
    converged &= ok
    if not converged:
        log.warning("gamma estimate: budget of %d iterations exhausted before "
                    "gradient norm < 1e-4", budget)
    raw = global_min - sum(p * f for p, f in zip(weights, client_mins))
    if raw < 0:
        log.info("gamma estimate %.3g clamped to 0", raw)
    return GammaEstimate(max(0.0, raw), raw, raw < 0, global_min, tuple(client_mins), converged)


def estimate_sigma_sq(spec: ModelSpec, params: ParamVector, client: ClientDataset,
                      batch_size: int, rng: np.random.Generator) -> float:
    """Empirical variance of mini-batch gradients around the full gradient.

    A stand-in for the stochastic-gradient variance bound, measured at
    ``params`` over one shuffled epoch.
    """
    X, y = client.train.X, client.train.y
    _, full = loss_and_grad(spec, params.values, X, y)
    devs = []
    for batch in make_batches(client.train, batch_size, rng):
        _, g = loss_and_grad(spec, params.values, batch.X, batch.y)
        devs.append(float(np.sum((g - full) ** 2)))
    return float(np.mean(devs))


def convergence_constant(sigma_ks: Sequence[float], weights: Sequence[float], L: float,
                         gamma: float, delta: int, E: int, G: float) -> float:
    """``sum p_k^2 sigma_k^2 + 6 L gamma + 8 delta E^2 G^2``."""
    args = [L, gamma, delta, E, G, *sigma_ks, *weights]
    if any(a < 0 for a in args):
        raise ValueError("all inputs must be non-negative")
    variance = sum(p * p * s * s for p, s in zip(weights, sigma_ks))
    return variance + 6.0 * L * gamma + 8.0 * delta * E * E * G * G


# -- divergence bound ----------------------------------------------------------

@dataclass
class BoundReport:
    rounds: list[int]
    stages: list[str]
    lhs: list[float]
    rhs: float
    margin: list[float]
    grad_bound: float
    steps_per_call: int
    lr: float
    delta: int

    @property
    def holds(self) -> bool:
        return all(m >= 0 for m in self.margin)

    @property
    def min_margin(self) -> float:
        return min(self.margin)


def divergence_bound(delta: int, lr: float, steps: int, grad_bound: float) -> float:
    return 4.0 * delta * lr * lr * steps * steps * grad_bound * grad_bound


def divergence_bound_check(trajectory: Iterable[Snapshot], schedule: SkipSchedule,
                           local_cfg: LocalConfig, steps_per_call: int,
                           grad_bound: float) -> BoundReport:
    """Compare measured model divergence with ``4 delta lr^2 E^2 G^2``.

    ``steps_per_call`` is the number of SGD steps in one local call and
    ``grad_bound`` the largest minibatch gradient norm observed in the run.
    """
    rhs = divergence_bound(schedule.delta, local_cfg.lr, steps_per_call, grad_bound)
    rounds, stages, lhs = [], [], []
    for snap in trajectory:
        rounds.append(snap.round)
        stages.append(snap.stage)
        lhs.append(client_drift_variance(snap.models, snap.weights))
    return BoundReport(rounds, stages, lhs, rhs, [rhs - v for v in lhs], grad_bound,
                       steps_per_call, local_cfg.lr, schedule.delta)


# -- efficiency ------------------------------------------------------------------

@dataclass(frozen=True)
class EfficiencySummary:
    target_accuracy: float
    rounds_to_target: Optional[int] = None
    aggregations_to_target: Optional[int] = None
    speedup_vs_baseline: Optional[float] = None


def first_hit(records: Sequence[RoundRecord], target: float) -> Optional[RoundRecord]:
    for r in records:
        if r.test_accuracy is not None and r.test_accuracy >= target:
            return r
    return None


def best_accuracy(records: Sequence[RoundRecord]) -> float:
    accs = [r.test_accuracy for r in records if r.test_accuracy is not None]
    if not accs:
        raise ValueError("no evaluated rounds")
    return max(accs)


def baseline_reference(records: Sequence[RoundRecord]) -> tuple[float, int]:
    """Best accuracy of a baseline run and the rounds it needed to reach it."""
    best = best_accuracy(records)
    return best, first_hit(records, best).comm_rounds_so_far


def efficiency_summary(records: Sequence[RoundRecord], baseline_best_accuracy: float,
                       baseline_rounds: Optional[int] = None) -> EfficiencySummary:
    hit = first_hit(records, baseline_best_accuracy)
    if hit is None:
        return EfficiencySummary(baseline_best_accuracy)
    speedup = None
    if baseline_rounds is not None:
        speedup = baseline_rounds / hit.comm_rounds_so_far
    return EfficiencySummary(baseline_best_accuracy, hit.comm_rounds_so_far,
                             hit.aggregations_so_far, speedup)


def mean_drift(records: Sequence[RoundRecord]) -> float:
    vals = [r.drift_variance for r in records if r.drift_variance is not None]
    return float(np.mean(vals)) if vals else math.nan


@dataclass
class SummaryRow:
    strategy: str
    delta: int
    beta: float
    seed: int
    final_accuracy: Optional[float]
    rounds_to_target: Optional[int]
    aggregations_to_target: Optional[int]
    speedup: Optional[float]
    mean_drift_variance: float
    gamma: Optional[float] = None


def summarize(strategy: str, delta: int, beta: float, seed: int,
              records: Sequence[RoundRecord],
              baseline: Optional[tuple[float, int]] = None,
              gamma: Optional[float] = None) -> SummaryRow:
    """One CSV row; the target is the baseline's best accuracy, else the run's own."""
    target, rounds = baseline if baseline is not None else baseline_reference(records)
    eff = efficiency_summary(records, target, rounds)
    final = records[-1].test_accuracy if records else None
    return SummaryRow(strategy, delta, beta, seed, final, eff.rounds_to_target,
                      eff.aggregations_to_target, eff.speedup_vs_baseline,
                      mean_drift(records), gamma)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


def write_summary_csv(path: str | Path, rows: Sequence[SummaryRow]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            writer.writerow([_cell(getattr(row, col)) for col in SUMMARY_COLUMNS])
    tmp.replace(path)


def read_summary_csv(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
