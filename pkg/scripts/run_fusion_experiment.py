#!/usr/bin/env python3
"""Fusion-quality experiment on the synthetic four-room world.

Per scan-level fold: train one map jointly on all training scans, run the
fuse-once protocol (4 quadrant agents, single merge at 100%), and the
repeated protocol (merges at 25/50/75/100%). Reports test AUC as
mean +/- std over folds.

Usage: python scripts/run_fusion_experiment.py [--seed 7] [--folds 5] [--json out.json]
"""

import argparse
import json
import sys

import numpy as np

from hilbertfuse.features import Point2
from hilbertfuse.ingest import flatten_samples, k_fold_scans
from hilbertfuse.metrics import ScoredLabels, auc
from hilbertfuse.model import new_map, predict_many, samples_to_arrays
from hilbertfuse.simulate import (
    SimulationPlan,
    make_fusion_benchmark,
    quadrant_agents,
    run_simulation,
    train_on_scans,
)


def test_auc(posterior, basis, samples):
    pts, labels = samples_to_arrays(samples)
    return auc(ScoredLabels(predict_many(posterior, basis, pts), labels))


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--folds", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write results as JSON")
    args = ap.parse_args()

    env, basis, cfg = make_fusion_benchmark(seed=args.seed)
    all_scans = sorted(env.train_scans + env.test_scans, key=lambda s: s.scan_id)
    center = Point2(
        (env.bounds[0] + env.bounds[1]) / 2.0, (env.bounds[2] + env.bounds[3]) / 2.0
    )

    results = {"no_fusion": [], "fuse_once": [], "repeatedly_fused": []}
    for fold, (train, test) in enumerate(k_fold_scans(all_scans, args.folds, seed=args.seed)):
        eval_samples = flatten_samples(test)

        joint = train_on_scans(new_map(basis, cfg), basis, train, cfg)
        results["no_fusion"].append(test_auc(joint, basis, eval_samples))

        once = run_simulation(
            quadrant_agents(train, center, basis, cfg),
            SimulationPlan(fusion_points=(1.0,)),
            basis,
            cfg,
        )
        results["fuse_once"].append(test_auc(once.final_global, basis, eval_samples))

        repeated = run_simulation(
            quadrant_agents(train, center, basis, cfg),
            SimulationPlan(fusion_points=(0.25, 0.5, 0.75, 1.0)),
            basis,
            cfg,
        )
        results["repeatedly_fused"].append(test_auc(repeated.final_global, basis, eval_samples))
        print(
            f"fold {fold}: no_fusion={results['no_fusion'][-1]:.4f} "
            f"fuse_once={results['fuse_once'][-1]:.4f} "
            f"repeated={results['repeatedly_fused'][-1]:.4f}"
        )

    print()
    print(f"{'Fusion Type':<18} {'AUC (mean +/- std over folds)'}")
    summary = {}
    for name, vals in results.items():
        mean, std = float(np.mean(vals)), float(np.std(vals))
        summary[name] = {"mean": mean, "std": std, "folds": vals}
        print(f"{name:<18} {mean:.3f} +/- {std:.3f}")

    if args.json:
        with open(args.json, "w") as f:
            json.dump({"seed": args.seed, "folds": args.folds, "auc": summary}, f, indent=2, sort_keys=True)
        print(f"\nwrote {args.json}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
