#!/usr/bin/env python3
"""Model size vs map quality sweep on the dense four-room world.

Continuous maps of several feature counts (fuse-once protocol) against the
log-odds grid at each resolution (f64 and 1-byte cells), reporting exact
serialized bytes and held-out AUC per representation.

Usage: python scripts/run_size_sweep.py [--seed 11] [--sizes 64,144,400]
       [--resolutions 0.1,0.2,0.4] [--json out.json]
"""

import argparse
import json
import sys

from hilbertfuse.simulate import make_size_benchmark, size_auc_sweep


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--sizes", default="64,144,400", help="comma list of target feature counts")
    ap.add_argument("--resolutions", default="0.1,0.2,0.4", help="comma list of grid resolutions (m)")
    ap.add_argument("--json", default=None)
    args = ap.parse_args()

    env, cfg = make_size_benchmark(seed=args.seed)
    sizes = [int(s) for s in args.sizes.split(",") if s]
    resolutions = [float(r) for r in args.resolutions.split(",") if r]
    rows = size_auc_sweep(env, sizes, resolutions, cfg=cfg)

    print(f"{'representation':<14} {'param':>8} {'bytes':>10} {'AUC':>8}")
    for r in rows:
        print(f"{r.kind:<14} {r.param:>8g} {r.bytes:>10d} {r.auc:>8.4f}")

    if args.json:
        with open(args.json, "w") as f:
            json.dump([r.to_json_dict() for r in rows], f, indent=2, sort_keys=True)
        print(f"\nwrote {args.json}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
