"""Multi-agent decentralized mapping simulator.

Drives agents through partitioned scan streams, runs the round-based fusion
protocol at scheduled training-progress points, accounts transmitted bytes,
and compares the fused global map against a jointly trained reference and
the grid baseline.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, MetricUndefinedError
from .features import FeatureBasis, Point2, make_grid_basis
from .fusion import FilterPolicy, FusionRound, sequential_fusion
from .gridmap import GridMap, grid_to_bytes, ingest_samples, query_points
from .ingest import (
    EnvironmentLayout,
    GroundTruth,
    ScanRecord,
    flatten_samples,
    four_room_layout,
    partition_by_quadrant,
    scans_from_beams,
    split_scans,
    synth_environment,
)
from .metrics import ScoredLabels, auc, precision_recall
from .model import (
    LabeledSample,
    TrainConfig,
    WeightPosterior,
    em_update,
    new_map,
    predict_many,
    samples_to_arrays,
    serialize,
)


@dataclass
class AgentState:
    agent_id: str
    local_map: WeightPosterior
    scan_queue: list[ScanRecord]
    snapshot: WeightPosterior | None = None  # global copy from the last fusion joined
    bytes_sent: int = 0


@dataclass(frozen=True)
class SimulationPlan:
    fusion_points: tuple[float, ...] = (0.25, 0.5, 0.75, 1.0)
    policy: FilterPolicy | None = None
    bandwidth_cap: int | None = None

    def __post_init__(self):
        pts = tuple(float(p) for p in self.fusion_points)
        if len(pts) == 0:
            raise ConfigurationError("fusion_points must be non-empty")
        if any(not 0.0 < p <= 1.0 for p in pts) or any(b <= a for a, b in zip(pts, pts[1:])):
            raise ConfigurationError(f"fusion_points must be strictly increasing in (0,1], got {pts}")
        object.__setattr__(self, "fusion_points", pts)


@dataclass
class EnvData:
    """A synthesized world ready for experiments."""

    train_scans: list[ScanRecord]
    test_scans: list[ScanRecord]
    test_samples: list[LabeledSample]
    bounds: tuple[float, float, float, float]
    truth: GroundTruth


def build_env_data(
    layout: EnvironmentLayout,
    noise_sd: float = 0.0,
    seed: int = 0,
    free_spacing: float = 0.5,
    test_fraction: float = 0.1,
) -> EnvData:
    """Synthesize sweeps, ray-sample them, and hold out a scan-level test set."""
    beams, truth = synth_environment(layout, noise_sd=noise_sd, seed=seed)
    scans = scans_from_beams(beams, free_spacing=free_spacing)
    train, test = split_scans(scans, test_fraction=test_fraction, seed=seed)
    return EnvData(train, test, flatten_samples(test), layout.bounds(), truth)


def make_fusion_benchmark(seed: int = 7) -> tuple[EnvData, FeatureBasis, TrainConfig]:
    """Desk-scale four-room fusion benchmark.

    About 4,300 training samples after ray sampling, a 21x21 inducing lattice
    (m = 441) at unit spacing, and a moderately informative prior; fully
    deterministic for a fixed seed.
    """
    layout = four_room_layout(scan_count=36, beams_per_scan=20)
    env = build_env_data(layout, noise_sd=0.02, seed=seed, free_spacing=1.0, test_fraction=0.1)
    xmin, xmax, ymin, ymax = env.bounds
    basis = make_grid_basis(xmin, xmax, ymin, ymax, spacing=1.0, gamma=4.0)
    return env, basis, TrainConfig(prior_variance=100.0)


def make_size_benchmark(seed: int = 11) -> tuple[EnvData, TrainConfig]:
    """Denser four-room world for size-vs-quality sweeps: enough beam
    coverage that a 10 cm grid is competitive."""
    layout = four_room_layout(scan_count=100, beams_per_scan=48)
    env = build_env_data(layout, noise_sd=0.01, seed=seed, free_spacing=0.3, test_fraction=0.1)
    return env, TrainConfig(prior_variance=100.0)


def quadrant_agents(
    train_scans: Sequence[ScanRecord],
    center: Point2,
    basis: FeatureBasis,
    cfg: TrainConfig,
) -> list[AgentState]:
    """One agent per non-empty quadrant, queues in scan order."""
    parts = partition_by_quadrant(train_scans, center)
    agents = []
    for name in ("upper_left", "upper_right", "lower_left", "lower_right"):
        if parts[name]:
            agents.append(AgentState(name, new_map(basis, cfg), list(parts[name])))
    if not agents:
        raise ConfigurationError("no scans to assign to any quadrant")
    return agents


def _scan_ids_checksum(ids: Sequence[int]) -> str:
    return hashlib.sha256(",".join(str(i) for i in ids).encode()).hexdigest()


def train_on_scans(
    posterior: WeightPosterior, basis: FeatureBasis, scans: Sequence[ScanRecord], cfg: TrainConfig
) -> WeightPosterior:
    for scan in scans:
        posterior = em_update(posterior, basis, scan.samples, cfg)
    return posterior


@dataclass
class SimulationReport:
    rounds: list[dict]
    agents: list[dict]
    metrics: dict
    sizes: dict
    union_checksum: str
    consumed_checksum: str
    plan: dict
    final_global: WeightPosterior = field(repr=False, default=None)
    reference: WeightPosterior = field(repr=False, default=None)
    round_globals: list[WeightPosterior] = field(repr=False, default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "agents": self.agents,
            "metrics": self.metrics,
            "sizes": self.sizes,
            "union_checksum": self.union_checksum,
            "consumed_checksum": self.consumed_checksum,
            "plan": self.plan,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"


def run_simulation(
    agents: Sequence[AgentState],
    plan: SimulationPlan,
    basis: FeatureBasis,
    cfg: TrainConfig,
    eval_samples: Sequence[LabeledSample] | None = None,
) -> SimulationReport:
    """Train every agent through its queue with fusion at each progress point.

    The report carries per-round transcripts (participants, bytes, fused map
    checksum), per-agent ledgers, and end-of-run metrics for the fused global
    against a jointly trained reference built on the union of all queues in
    scan-id order.
    """
    if len(agents) == 0:
        raise ConfigurationError("run_simulation requires at least one agent")
    if any(len(a.scan_queue) == 0 for a in agents):
        raise ConfigurationError("every agent needs a non-empty scan queue")
    policy = plan.policy or FilterPolicy.for_prior(cfg.prior_variance)

    cuts = {
        a.agent_id: [0] + [int(round(p * len(a.scan_queue))) for p in plan.fusion_points]
        for a in agents
    }

    def trainer(agent_idx: int, round_idx: int):
        agent = agents[agent_idx]
        lo, hi = cuts[agent.agent_id][round_idx], cuts[agent.agent_id][round_idx + 1]
        return [scan.samples for scan in agent.scan_queue[lo:hi]]

    round_records: list[dict] = []

    def on_round(record: FusionRound, global_map: WeightPosterior) -> None:
        doc = record.to_json_dict()
        if eval_samples is not None:
            doc["auc"] = _eval_auc(global_map, basis, eval_samples)
        round_records.append(doc)

    round_globals = sequential_fusion(
        agents,
        rounds=len(plan.fusion_points),
        trainer=trainer,
        policy=policy,
        basis=basis,
        cfg=cfg,
        bandwidth_cap=plan.bandwidth_cap,
        on_round=on_round,
    )
    final_global = round_globals[-1]

    # Jointly trained reference: one map over the union of all queues in
    # scan-id order, each scan consumed exactly once.
    union = sorted((scan for a in agents for scan in a.scan_queue), key=lambda s: s.scan_id)
    union_checksum = _scan_ids_checksum(sorted(s.scan_id for a in agents for s in a.scan_queue))
    reference = new_map(basis, cfg)
    consumed = []
    for scan in union:
        reference = em_update(reference, basis, scan.samples, cfg)
        consumed.append(scan.scan_id)
    consumed_checksum = _scan_ids_checksum(consumed)

    metrics_doc: dict = {}
    if eval_samples is not None:
        metrics_doc = {
            "fused": _eval_all(final_global, basis, eval_samples),
            "reference": _eval_all(reference, basis, eval_samples),
        }

    agents_doc = [
        {
            "agent_id": a.agent_id,
            "bytes_sent": a.bytes_sent,
            "scans": len(a.scan_queue),
            "fused": a.snapshot is not None,
        }
        for a in agents
    ]
    sizes_doc = {
        "fused_model_bytes": len(serialize(final_global, basis, cfg)),
        "reference_model_bytes": len(serialize(reference, basis, cfg)),
        "weights": final_global.m,
    }
    plan_doc = {
        "fusion_points": list(plan.fusion_points),
        "variance_threshold": policy.variance_threshold,
        "bandwidth_cap": plan.bandwidth_cap,
    }
    return SimulationReport(
        rounds=round_records,
        agents=agents_doc,
        metrics=metrics_doc,
        sizes=sizes_doc,
        union_checksum=union_checksum,
        consumed_checksum=consumed_checksum,
        plan=plan_doc,
        final_global=final_global,
        reference=reference,
        round_globals=list(round_globals),
    )


def _eval_auc(posterior: WeightPosterior, basis: FeatureBasis, samples: Sequence[LabeledSample]) -> float:
    pts, labels = samples_to_arrays(samples)
    return auc(ScoredLabels(predict_many(posterior, basis, pts), labels))


def _eval_all(
    posterior: WeightPosterior, basis: FeatureBasis, samples: Sequence[LabeledSample], threshold: float = 0.5
) -> dict:
    pts, labels = samples_to_arrays(samples)
    sl = ScoredLabels(predict_many(posterior, basis, pts), labels)
    try:
        precision, recall = precision_recall(sl, threshold)
    except MetricUndefinedError:
        precision = recall = None  # e.g. no positive predictions at this threshold
    return {"auc": auc(sl), "precision": precision, "recall": recall}


# ---------------------------------------------------------------------------
# Size vs quality sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    kind: str  # "fastbhm" | "grid_f64" | "grid_u8"
    param: float  # feature count or cell resolution
    bytes: int
    auc: float

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "param": self.param, "bytes": self.bytes, "auc": self.auc}


def basis_for_target(
    bounds: tuple[float, float, float, float],
    m_target: int,
    gamma_scale: float = 4.0,
    include_bias: bool = False,
) -> FeatureBasis:
    """Lattice basis sized to roughly m_target features over the bounds.

    Spacing is the side of a square tile with area extent/m_target; gamma is
    gamma_scale/spacing^2 so the kernel footprint tracks lattice density.
    The default scale keeps neighbors nearly decoupled (exp(-4) overlap),
    which resists the free-space evidence imbalance of ray-sampled data.
    """
    xmin, xmax, ymin, ymax = bounds
    if m_target < 4:
        raise ConfigurationError(f"m_target must be at least 4, got {m_target}")
    spacing = math.sqrt((xmax - xmin) * (ymax - ymin) / m_target)
    return make_grid_basis(
        xmin, xmax, ymin, ymax, spacing, gamma=gamma_scale / spacing**2, include_bias=include_bias
    )


def size_auc_sweep(
    env: EnvData,
    basis_sizes: Sequence[int],
    grid_resolutions: Sequence[float],
    cfg: TrainConfig | None = None,
    hit_p: float = 0.7,
    miss_p: float = 0.3,
) -> list[SweepRow]:
    """(bytes, AUC) per representation and size parameter.

    Continuous maps run the fuse-once protocol over quadrant agents; grids
    ingest all training samples and report both f64 and 1-byte-cell
    serializations (the byte encoding changes size, and AUC only through
    probability quantization).
    """
    cfg = cfg or TrainConfig()
    rows: list[SweepRow] = []
    xmin, xmax, ymin, ymax = env.bounds
    center = Point2((xmin + xmax) / 2.0, (ymin + ymax) / 2.0)
    test_pts, test_labels = samples_to_arrays(env.test_samples)

    for m_target in basis_sizes:
        basis = basis_for_target(env.bounds, m_target)
        agents = quadrant_agents(env.train_scans, center, basis, cfg)
        plan = SimulationPlan(fusion_points=(1.0,), policy=FilterPolicy.for_prior(cfg.prior_variance))
        report = run_simulation(agents, plan, basis, cfg)
        scores = predict_many(report.final_global, basis, test_pts)
        rows.append(
            SweepRow(
                "fastbhm",
                float(basis.m),
                len(serialize(report.final_global, basis, cfg)),
                auc(ScoredLabels(scores, test_labels)),
            )
        )

    train_samples = flatten_samples(env.train_scans)
    for res in grid_resolutions:
        width = max(1, int(math.ceil((xmax - xmin) / res)))
        height = max(1, int(math.ceil((ymax - ymin) / res)))
        grid = GridMap(Point2(xmin, ymin), res, width, height)
        ingest_samples(grid, train_samples, hit_p=hit_p, miss_p=miss_p)

        f64_blob = grid_to_bytes(grid, cell_bytes=8)
        u8_blob = grid_to_bytes(grid, cell_bytes=1)
        scores_f64 = query_points(grid, test_pts)
        # Quantized scores exactly as a reader of the 1-byte format sees them.
        scores_u8 = np.rint(scores_f64 * 255.0) / 255.0
        rows.append(SweepRow("grid_f64", res, len(f64_blob), auc(ScoredLabels(scores_f64, test_labels))))
        rows.append(SweepRow("grid_u8", res, len(u8_blob), auc(ScoredLabels(scores_u8, test_labels))))

    return rows


def render_model(
    posterior: WeightPosterior,
    basis: FeatureBasis,
    bounds: tuple[float, float, float, float],
    resolution: float,
) -> np.ndarray:
    """Occupancy probability raster at cell centers; row 0 at ymin."""
    xmin, xmax, ymin, ymax = bounds
    if resolution <= 0 or xmax <= xmin or ymax <= ymin:
        raise ConfigurationError("render needs positive resolution and a non-empty extent")
    width = max(1, int(math.ceil((xmax - xmin) / resolution)))
    height = max(1, int(math.ceil((ymax - ymin) / resolution)))
    xs = xmin + (np.arange(width) + 0.5) * resolution
    ys = ymin + (np.arange(height) + 0.5) * resolution
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return predict_many(posterior, basis, pts).reshape(height, width)
