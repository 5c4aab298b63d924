#!/usr/bin/env python3
"""Parameter-count distribution of 500 uniform samples per search space."""

import argparse
import csv
from pathlib import Path


from subnet_nas.experiments import sampler_stats
from subnet_nas.harness import param_count_samples
from subnet_nas.model import ModelDims
from subnet_nas.spaces import SearchSpace, SpaceKind


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/sampler_hist.csv")
    args = ap.parse_args()

    dims = ModelDims()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["space", "param_count"])
        for kind in SpaceKind:
            for c in param_count_samples(SearchSpace(kind, dims), args.n, args.seed):
                w.writerow([kind.value, int(c)])
    for s in sampler_stats(dims, args.n, args.seed).values():
        ks_d = "" if s.ks_discrete is None else f"  KS(discrete) {s.ks_discrete:.3f}"
        print(f"{s.space:7s} median {s.median_frac:.2f}  mid-half {s.mid_half_mass:.2f}  "
              f"KS {s.ks_continuous:.3f}{ks_d}")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
