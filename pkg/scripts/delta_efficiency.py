"""FedSkip Delta sweep against FedAvg: best accuracy and rounds to FedAvg's best."""

import argparse

from fedskip.config import parse_config
from fedskip.metrics import baseline_reference, efficiency_summary
from fedskip.server import StrategyConfig
from fedskip.simulation import run_federated


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/leaf_fedavg.json")
    parser.add_argument("--deltas", type=int, nargs="+", default=[3, 5, 7, 10])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()

    base = parse_config(args.config).replace(seed=args.seed, strategy=StrategyConfig("fedavg"))
    baseline = run_federated(base, threads=args.threads).records
    best, rounds = baseline_reference(baseline)
    print(f"fedavg best={best:.4f} first reached after {rounds} communication rounds")
    print("delta\tbest\trounds_to_target\taggregations_to_target\tspeedup")
    for delta in args.deltas:
        cfg = base.replace(strategy=StrategyConfig("fedskip", delta=delta))
        records = run_federated(cfg, threads=args.threads).records
        eff = efficiency_summary(records, best, rounds)
        speedup = "-" if eff.speedup_vs_baseline is None else f"{eff.speedup_vs_baseline:.2f}"
        print(f"{delta}\t{max(r.test_accuracy or 0 for r in records):.4f}\t"
              f"{eff.rounds_to_target}\t{eff.aggregations_to_target}\t{speedup}")


if __name__ == "__main__":
    main()
