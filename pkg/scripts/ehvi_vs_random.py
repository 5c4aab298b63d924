#!/usr/bin/env python3
"""Evaluations EHVI and random search need to reach 90% of the best HV on a synthetic objective."""

import argparse

import numpy as np

from subnet_nas.experiments import ehvi_vs_random


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--fraction", type=float, default=0.9)
    args = ap.parse_args()

    rs, eh = ehvi_vs_random(range(args.seeds), args.fraction)
    med = np.median(rs)
    print("random search:", rs, "median", med)
    print("EHVI:         ", eh, "median", np.median(eh))
    print(f"EHVI below the random-search median in {sum(e < med for e in eh)}/{args.seeds} seeds")


if __name__ == "__main__":
    main()
