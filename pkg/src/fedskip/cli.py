"""Command-line entry point: ``run``, ``sweep``, ``toy`` and ``analyze``.

Exit codes: 0 on success, 1 on configuration errors, 2 when a run diverges.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

from fedskip.config import ConfigError, ExperimentConfig, SweepSpec, parse_config
from fedskip.local import DivergenceError
from fedskip.metrics import (SummaryRow, baseline_reference, divergence_bound_check,
                             estimate_gamma, summarize, write_summary_csv)
from fedskip.server import fedavg_weights
from fedskip.simulation import (_schedule, build_federation, read_records, run_cross_mode,
                                run_federated, run_local_mode, write_records)

log = logging.getLogger("fedskip")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _load_experiment(path: str, seed: int | None) -> ExperimentConfig:
    cfg = parse_config(path)
    if isinstance(cfg, SweepSpec):
        raise ConfigError("<root>: expected a single experiment, got a sweep")
    return cfg if seed is None else cfg.replace(seed=seed)


def _cell_name(cfg: ExperimentConfig) -> str:
    return f"{cfg.strategy.label}_beta{cfg.partition.beta}_seed{cfg.seed}"


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_experiment(args.config, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = run_federated(cfg, threads=args.threads)
    write_records(out / "records.jsonl", result.records, timing=args.timing)
    _atomic_write(out / "config.json", cfg.to_json() + "\n")
    _atomic_write(out / "final_params.json",
                  json.dumps([repr(float(v)) for v in result.final_params.values]) + "\n")
    baseline = None
    if args.baseline:
        baseline = baseline_reference(read_records(args.baseline))
    elif cfg.target_accuracy is not None:
        baseline = (cfg.target_accuracy, None)
    row = summarize(cfg.strategy.label, cfg.strategy.delta, cfg.partition.beta, cfg.seed,
                    result.records, baseline)
    write_summary_csv(out / "summary.csv", [row])
    print(f"final_accuracy={row.final_accuracy:.4f} best_accuracy={result.best_accuracy():.4f} "
          f"aggregations={result.records[-1].aggregations_so_far}")
    return 0


def _run_cell(cfg: ExperimentConfig, out: Path, timing: bool):
    try:
        result = run_federated(cfg)
    except DivergenceError as exc:
        log.error("%s diverged: %s", _cell_name(cfg), exc)
        return None
    write_records(out / f"{_cell_name(cfg)}.jsonl", result.records, timing=timing)
    return result.records


def cmd_sweep(args: argparse.Namespace) -> int:
    spec = parse_config(args.config)
    if not isinstance(spec, SweepSpec):
        raise ConfigError("<root>: expected a sweep file with 'base' and 'sweep'")
    if args.seed is not None:
        spec = dataclasses.replace(spec, seeds=(args.seed,))
    cells = spec.cells()
    out = Path(args.out_dir)
    (out / "cells").mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        outcomes = list(pool.map(lambda c: _run_cell(c, out / "cells", args.timing), cells))

    # The fedavg cell of the same (beta, seed) is the efficiency baseline.
    baselines = {}
    for cfg, records in zip(cells, outcomes):
        if cfg.strategy.kind == "fedavg" and records is not None:
            baselines[(cfg.partition.beta, cfg.seed)] = baseline_reference(records)
    rows = []
    diverged = 0
    for cfg, records in zip(cells, outcomes):
        if records is None:
            diverged += 1
            rows.append(SummaryRow(cfg.strategy.label, cfg.strategy.delta, cfg.partition.beta,
                                   cfg.seed, None, None, None, None, float("nan")))
            continue
        rows.append(summarize(cfg.strategy.label, cfg.strategy.delta, cfg.partition.beta,
                              cfg.seed, records, baselines.get((cfg.partition.beta, cfg.seed))))
    write_summary_csv(out / "summary.csv", rows)
    print(f"{len(cells)} cells, {diverged} diverged -> {out / 'summary.csv'}")
    return 0


def cmd_toy(args: argparse.Namespace) -> int:
    cfg = _load_experiment(args.config, args.seed)
    fed = build_federation(cfg)
    local_acc = run_local_mode(cfg, fed)
    cross_acc = run_cross_mode(cfg, fed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write(out / "toy.json", json.dumps(
        {"local_accuracy": local_acc, "cross_accuracy": cross_acc,
         "num_clients": len(fed.clients), "seed": cfg.seed}) + "\n")
    print(f"local_accuracy={local_acc:.4f} cross_accuracy={cross_acc:.4f}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    baseline = baseline_reference(read_records(args.baseline)) if args.baseline else None
    rows = []
    for path in args.records:
        records = read_records(path)
        rows.append(summarize(Path(path).stem, 0, float("nan"), 0, records, baseline))

    if args.config:
        cfg = _load_experiment(args.config, args.seed)
        fed = build_federation(cfg)
        result = run_federated(cfg, threads=args.threads, federation=fed, keep_trajectory=True)
        report = divergence_bound_check(result.trajectory, _schedule(cfg), cfg.local_config(),
                                        result.max_steps, result.max_grad_norm)
        gamma = None
        if cfg.model.family == "linear-softmax":
            gamma = estimate_gamma(fed.clients, fedavg_weights(fed.clients), fed.spec).gamma
        rows.append(summarize(cfg.strategy.label, cfg.strategy.delta, cfg.partition.beta,
                              cfg.seed, result.records, baseline, gamma))
        _atomic_write(out / "bound.json", json.dumps({
            "rhs": report.rhs, "grad_bound": report.grad_bound,
            "steps_per_call": report.steps_per_call, "holds": report.holds,
            "min_margin": report.min_margin,
            "points": [{"round": r, "stage": s, "lhs": v}
                       for r, s, v in zip(report.rounds, report.stages, report.lhs)],
        }, indent=1) + "\n")
        print(f"divergence bound holds={report.holds} min_margin={report.min_margin:.3g}")
    if not rows:
        raise ConfigError("analyze: give --records and/or --config")
    write_summary_csv(out / "summary.csv", rows)
    print(f"wrote {out / 'summary.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedskip", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out-dir", default="out")
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--timing", action="store_true",
                        help="keep wall-clock times in JSONL (breaks byte-identical output)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--baseline", help="FedAvg records.jsonl used as the efficiency target")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", parents=[common], help="run a strategy/delta/beta/seed grid")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("toy", parents=[common], help="Local vs Cross Training")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_toy)

    p = sub.add_parser("analyze", parents=[common], help="summaries and bound checks")
    p.add_argument("--records", nargs="*", default=[])
    p.add_argument("--baseline")
    p.add_argument("--config", help="re-run this config with trajectories for the bound check")
    p.set_defaults(func=cmd_analyze)
    return parser


def run_cli(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
