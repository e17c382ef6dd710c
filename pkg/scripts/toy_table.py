"""Local vs Cross Training accuracy on blobs for a few heterogeneity levels."""

import argparse
import math

import numpy as np

from fedskip.config import PartitionSettings, parse_config
from fedskip.simulation import build_federation, run_cross_mode, run_local_mode


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/toy_blobs.json")
    parser.add_argument("--betas", type=float, nargs="+", default=[0.1, 0.5, math.inf])
    parser.add_argument("--seeds", type=int, default=5)
    args = parser.parse_args()

    base = parse_config(args.config)
    print("beta\tlocal\tcross\tgap")
    for beta in args.betas:
        accs = []
        for seed in range(args.seeds):
            cfg = base.replace(seed=seed,
                               partition=PartitionSettings(beta, base.partition.num_clients))
            fed = build_federation(cfg)
            accs.append((run_local_mode(cfg, fed), run_cross_mode(cfg, fed)))
        local, cross = np.mean(accs, axis=0)
        print(f"{beta}\t{local:.4f}\t{cross:.4f}\t{cross - local:+.4f}")


if __name__ == "__main__":
    main()
