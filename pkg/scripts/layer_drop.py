#!/usr/bin/env python3
"""Layer dropping vs weight-sharing search on the majority task, same virtual wallclock."""

import argparse
import json
import time
from pathlib import Path

from subnet_nas.experiments import exhaustive_ws_front, front_weakly_dominated, layer_drop_vs_ws


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=list(range(10)))
    ap.add_argument("--strategy", default="full")
    ap.add_argument("--out", default="results/layer_drop.jsonl")
    ap.add_argument("--exhaustive", action="store_true",
                    help="also check against the front of all SMALL sub-networks under shared weights")
    args = ap.parse_args()

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    wins = 0
    with open(out, "w") as fh:
        for seed in args.seeds:
            t = time.perf_counter()
            r = layer_drop_vs_ws(seed, strategy=args.strategy)
            wins += r.dominated
            row = {
                "seed": seed,
                "budget_s": r.budget_s,
                "layer_drop": [list(e.objectives) for e in r.ld.records],
                "ws_front": r.ws_front.tolist(),
                "ld_dominated": r.dominated,
            }
            if args.exhaustive:
                full = exhaustive_ws_front(seed, strategy=args.strategy)
                row["exhaustive_ws_front"] = full.tolist()
                row["ld_dominated_by_exhaustive"] = front_weakly_dominated(r.ld.front_objectives(), full)
            fh.write(json.dumps(row) + "\n")
            fh.flush()
            best = min(r.ld.records, key=lambda e: e.objectives.f0)
            print(f"seed {seed} ({time.perf_counter() - t:.0f} s): LD best {tuple(best.objectives)}, "
                  f"WS front size {len(r.ws_front)}, LD dominated: {r.dominated}"
                  + (f", by exhaustive WS front: {row['ld_dominated_by_exhaustive']}" if args.exhaustive else ""))
    print(f"LD front weakly dominated by WS in {wins}/{len(args.seeds)} seeds")


if __name__ == "__main__":
    main()
