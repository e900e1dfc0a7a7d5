"""Command-line surface: train, fuse, simulate, eval, render.

Exit codes: 0 success, 2 parse errors (flags or input files), 3 I/O errors,
4 validation errors. All randomness flows from --seed; runs with the same
seed are byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fusion, gridmap, ingest, metrics, model, simulate
from .errors import BindingError, ConfigurationError, MetricUndefinedError, ParseError
from .features import Point2, make_grid_basis

EXIT_PARSE = 2
EXIT_IO = 3
EXIT_VALIDATION = 4


def _add_basis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spacing", type=float, default=1.0, help="inducing lattice spacing (m)")
    p.add_argument("--gamma", type=float, default=None, help="inverse squared length-scale; default 4/spacing^2")
    p.add_argument("--bias", action="store_true", help="append a constant bias feature")
    p.add_argument(
        "--bounds",
        type=float,
        nargs=4,
        metavar=("XMIN", "XMAX", "YMIN", "YMAX"),
        default=None,
        help="lattice extent; default derived from the data/environment",
    )


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--prior-mean", type=float, default=0.0)
    p.add_argument("--prior-variance", type=float, default=1e4)
    p.add_argument("--em-iters", type=int, default=3)


def _basis_from_args(args, bounds):
    gamma = args.gamma if args.gamma is not None else 4.0 / args.spacing**2
    xmin, xmax, ymin, ymax = bounds
    return make_grid_basis(xmin, xmax, ymin, ymax, args.spacing, gamma, include_bias=args.bias)


def _data_bounds(scans, pad: float) -> tuple[float, float, float, float]:
    pts = np.asarray([(s.point[0], s.point[1]) for sc in scans for s in sc.samples])
    return (
        float(pts[:, 0].min() - pad),
        float(pts[:, 0].max() + pad),
        float(pts[:, 1].min() - pad),
        float(pts[:, 1].max() + pad),
    )


def _load_samples(path: str) -> list[ingest.ScanRecord]:
    scans = ingest.read_samples_csv(path)
    if not scans:
        raise ConfigurationError(f"no samples in {path}")
    return scans


def cmd_train(args) -> int:
    scans = _load_samples(args.samples)
    bounds = tuple(args.bounds) if args.bounds else _data_bounds(scans, args.pad)
    basis = _basis_from_args(args, bounds)
    cfg = model.TrainConfig(args.prior_mean, args.prior_variance, args.em_iters)
    posterior = simulate.train_on_scans(model.new_map(basis, cfg), basis, scans, cfg)
    Path(args.out).write_bytes(model.serialize(posterior, basis, cfg))
    n = sum(len(s.samples) for s in scans)
    print(f"trained {basis.m} weights on {n} samples from {len(scans)} scans -> {args.out}")
    return 0


def cmd_fuse(args) -> int:
    blobs = [Path(p).read_bytes() for p in args.models]
    if len(blobs) == 1:
        # Fusing a single map is the identity; pass the model through verbatim.
        Path(args.out).write_bytes(blobs[0])
        print(f"single model passthrough -> {args.out}")
        return 0
    loaded = [model.deserialize(b) for b in blobs]
    posterior0, basis, cfg = loaded[0]
    threshold = args.variance_threshold
    if threshold is None:
        threshold = 0.5 * cfg.prior_variance
    policy = fusion.FilterPolicy(threshold)
    contributions = [(p, fusion.Role.FULL_ESTIMATE) for p, _, _ in loaded]
    fused = fusion.fuse_maps(contributions, cfg.prior_mean, cfg.prior_variance, policy)
    Path(args.out).write_bytes(model.serialize(fused, basis, cfg))
    print(f"fused {len(blobs)} models ({fused.m} weights, threshold {threshold:g}) -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    if args.env:
        layout = ingest.layout_from_json(Path(args.env).read_text())
    else:
        layout = ingest.four_room_layout()
    env = simulate.build_env_data(
        layout,
        noise_sd=args.noise_sd,
        seed=args.seed,
        free_spacing=args.free_spacing,
        test_fraction=args.test_fraction,
    )
    bounds = tuple(args.bounds) if args.bounds else env.bounds
    basis = _basis_from_args(args, bounds)
    cfg = model.TrainConfig(args.prior_mean, args.prior_variance, args.em_iters)
    threshold = args.variance_threshold if args.variance_threshold is not None else 0.5 * cfg.prior_variance
    plan = simulate.SimulationPlan(
        fusion_points=tuple(float(x) for x in args.fusion_points.split(",")),
        policy=fusion.FilterPolicy(threshold),
        bandwidth_cap=args.bandwidth_cap,
    )
    xmin, xmax, ymin, ymax = env.bounds
    agents = simulate.quadrant_agents(env.train_scans, Point2((xmin + xmax) / 2, (ymin + ymax) / 2), basis, cfg)
    report = simulate.run_simulation(agents, plan, basis, cfg, eval_samples=env.test_samples)

    Path(args.report).write_text(report.to_json())
    if args.out_model:
        Path(args.out_model).write_bytes(model.serialize(report.final_global, basis, cfg))
    if args.transcript:
        with open(args.transcript, "w") as f:
            for rec in report.rounds:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
    if args.render_dir:
        outdir = Path(args.render_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        for i, g in enumerate(report.round_globals):
            probs = simulate.render_model(g, basis, env.bounds, args.render_resolution)
            (outdir / f"round_{i:02d}.pgm").write_bytes(gridmap.probabilities_to_pgm(probs))
    fused_auc = report.metrics["fused"]["auc"]
    print(
        f"simulated {len(agents)} agents, {len(plan.fusion_points)} fusion rounds, "
        f"fused AUC {fused_auc:.4f} -> {args.report}"
    )
    return 0


def cmd_eval(args) -> int:
    posterior, basis, _ = model.deserialize(Path(args.model).read_bytes())
    scans = _load_samples(args.testset)
    samples = ingest.flatten_samples(scans)
    pts, labels = model.samples_to_arrays(samples)
    sl = metrics.ScoredLabels(model.predict_many(posterior, basis, pts), labels)
    precision, recall = metrics.precision_recall(sl, args.threshold)
    doc = {
        "auc": metrics.auc(sl),
        "precision": precision,
        "recall": recall,
        "threshold": args.threshold,
        "samples": len(samples),
        "positives": int(labels.sum()),
    }
    if args.out:
        Path(args.out).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    print(metrics.metrics_table(doc))
    print(f"evaluated {len(samples)} samples: AUC {doc['auc']:.4f}")
    return 0


def cmd_render(args) -> int:
    posterior, basis, _ = model.deserialize(Path(args.model).read_bytes())
    if args.bounds:
        bounds = tuple(args.bounds)
    else:
        pts = basis.inducing_points
        bounds = (float(pts[:, 0].min()), float(pts[:, 0].max()), float(pts[:, 1].min()), float(pts[:, 1].max()))
    probs = simulate.render_model(posterior, basis, bounds, args.resolution)
    Path(args.out).write_bytes(gridmap.probabilities_to_pgm(probs))
    print(f"rendered {probs.shape[1]}x{probs.shape[0]} raster -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hilbertfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a continuous map on a sample CSV")
    p.add_argument("samples", help="CSV with header scan_id,x,y,label")
    p.add_argument("--out", required=True, help="output model path")
    p.add_argument("--pad", type=float, default=1.0, help="padding around data bounds (m)")
    _add_basis_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fuse", help="merge trained models into a global model")
    p.add_argument("models", nargs="+", help="input model paths (same basis)")
    p.add_argument("--out", required=True)
    p.add_argument("--variance-threshold", type=float, default=None, help="default: half the prior variance")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("simulate", help="multi-agent decentralized mapping run")
    p.add_argument("--env", default=None, help="environment layout JSON; default: built-in four-room world")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-sd", type=float, default=0.0, help="range noise std (m)")
    p.add_argument("--free-spacing", type=float, default=0.5, help="free-space sample interval along beams (m)")
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--fusion-points", default="0.25,0.5,0.75,1.0", help="comma list of training fractions")
    p.add_argument("--variance-threshold", type=float, default=None)
    p.add_argument("--bandwidth-cap", type=int, default=None, help="max bytes per agent per round")
    p.add_argument("--report", required=True, help="output report JSON")
    p.add_argument("--out-model", default=None, help="also write the fused global model")
    p.add_argument("--transcript", default=None, help="also write a JSONL fusion transcript")
    p.add_argument("--render-dir", default=None, help="write per-round PGM renders here")
    p.add_argument("--render-resolution", type=float, default=0.1)
    _add_basis_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="score a model on a labeled test CSV")
    p.add_argument("model")
    p.add_argument("testset", help="CSV with header scan_id,x,y,label")
    p.add_argument("--out", default=None, help="metrics JSON path")
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="rasterize a model to a PGM image")
    p.add_argument("model")
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=float, default=0.1)
    p.add_argument(
        "--bounds", type=float, nargs=4, metavar=("XMIN", "XMAX", "YMIN", "YMAX"), default=None
    )
    p.set_defaults(func=cmd_render)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ConfigurationError, BindingError, MetricUndefinedError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
