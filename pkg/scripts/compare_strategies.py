#!/usr/bin/env python3
"""Shared-weights HV of 100 random sub-networks after super-network training with each strategy."""

import argparse
import csv
import time
from pathlib import Path

from subnet_nas.experiments import strategy_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    ap.add_argument("--strategies", nargs="+", default=["standard", "random", "random_linear", "sandwich", "kd", "full"])
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--out", default="results/strategies.csv")
    args = ap.parse_args()

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "strategy", "hv"])
        for seed in args.seeds:
            t = time.perf_counter()
            hv = strategy_comparison(seed, tuple(args.strategies), args.epochs)
            for k, v in hv.items():
                w.writerow([seed, k, repr(v)])
            fh.flush()
            print(f"seed {seed} ({time.perf_counter() - t:.0f} s): " + "  ".join(f"{k} {v:.3f}" for k, v in hv.items()))


if __name__ == "__main__":
    main()
