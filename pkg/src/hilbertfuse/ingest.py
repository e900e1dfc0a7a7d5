"""Data ingestion and synthesis.

Canonical inputs are labeled occupancy samples grouped into time-ordered
scans. Raw range scans are converted to samples by emitting one occupied
point at each beam endpoint and free points at fixed intervals along the
ray. A small synthetic indoor world (axis-aligned rectangular walls, a
patrol path, a fanned range sensor) stands in for real Lidar logs at desk
scale, with an exact geometric ground-truth oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ParseError
from .features import Point2
from .model import LabeledSample

DEFAULT_FREE_SPACING = 0.3

# Slack for "is this free-sample position strictly inside the beam".
_RANGE_EPS = 1e-12


@dataclass
class ScanRecord:
    scan_id: int
    samples: list[LabeledSample]

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ConfigurationError(f"scan {self.scan_id} has no samples")

    @property
    def mean_point(self) -> Point2:
        xs = math.fsum(s.point[0] for s in self.samples) / len(self.samples)
        ys = math.fsum(s.point[1] for s in self.samples) / len(self.samples)
        return Point2(xs, ys)


@dataclass
class BeamRecord:
    """One sweep of a range sensor from a known pose (x, y, heading)."""

    robot_pose: tuple[float, float, float]
    ranges: list[tuple[float, float, bool]]  # (bearing rad, range m, max-range flag)

    def __post_init__(self):
        if not all(np.isfinite(v) for v in self.robot_pose):
            raise ConfigurationError("robot pose must be finite")
        for bearing, rng, _ in self.ranges:
            if not (np.isfinite(bearing) and np.isfinite(rng) and rng >= 0):
                raise ConfigurationError(f"bad beam (bearing={bearing}, range={rng})")


def beams_to_samples(b: BeamRecord, free_spacing: float = DEFAULT_FREE_SPACING) -> list[LabeledSample]:
    """Labeled points from one sweep.

    Every beam yields free samples at multiples of free_spacing along the
    ray. A returned beam additionally yields one occupied sample at its
    endpoint and emits no free sample at or beyond it; a max-range beam
    yields free samples along the full beam, endpoint included.
    """
    if free_spacing <= 0:
        raise ConfigurationError(f"free_spacing must be positive, got {free_spacing}")
    ox, oy, theta = b.robot_pose
    out: list[LabeledSample] = []
    for bearing, rng, max_flag in b.ranges:
        dx, dy = math.cos(theta + bearing), math.sin(theta + bearing)
        k = 1
        while True:
            d = k * free_spacing
            if max_flag:
                if d > rng * (1.0 + _RANGE_EPS):
                    break
            elif d >= rng * (1.0 - _RANGE_EPS):
                break
            out.append(LabeledSample(Point2(ox + d * dx, oy + d * dy), 0))
            k += 1
        if not max_flag:
            out.append(LabeledSample(Point2(ox + rng * dx, oy + rng * dy), 1))
    return out


def scans_from_beams(
    beams: Sequence[BeamRecord], free_spacing: float = DEFAULT_FREE_SPACING
) -> list[ScanRecord]:
    """One ScanRecord per sweep, scan ids in sweep order."""
    scans = []
    for i, b in enumerate(beams):
        samples = beams_to_samples(b, free_spacing)
        if samples:
            scans.append(ScanRecord(i, samples))
    return scans


def partition_by_quadrant(scans: Sequence[ScanRecord], center: Point2) -> dict[str, list[ScanRecord]]:
    """Assign each scan to the quadrant of its mean point relative to center.

    Axis ties break toward the positive side: x >= center.x counts as right,
    y >= center.y as upper.
    """
    out: dict[str, list[ScanRecord]] = {
        "upper_left": [],
        "upper_right": [],
        "lower_left": [],
        "lower_right": [],
    }
    for scan in scans:
        mp = scan.mean_point
        vertical = "upper" if mp.y >= center.y else "lower"
        horizontal = "right" if mp.x >= center.x else "left"
        out[f"{vertical}_{horizontal}"].append(scan)
    return out


# ---------------------------------------------------------------------------
# Synthetic environment
# ---------------------------------------------------------------------------


@dataclass
class EnvironmentLayout:
    """Axis-aligned wall rectangles plus a patrol path and sensor fan."""

    walls: np.ndarray  # (r, 4): xmin, ymin, xmax, ymax
    path: np.ndarray  # (p, 2) waypoints, traversed in order
    scan_count: int = 32
    beams_per_scan: int = 36
    max_range: float = 10.0

    def __post_init__(self):
        self.walls = np.asarray(self.walls, dtype=np.float64)
        self.path = np.asarray(self.path, dtype=np.float64)
        if self.walls.ndim != 2 or self.walls.shape[1] != 4 or len(self.walls) == 0:
            raise ConfigurationError("walls must be a non-empty (r, 4) array")
        if np.any(self.walls[:, 2] <= self.walls[:, 0]) or np.any(self.walls[:, 3] <= self.walls[:, 1]):
            raise ConfigurationError("every wall rectangle must have positive area")
        if not np.all(np.isfinite(self.walls)):
            raise ConfigurationError("walls must be finite")
        if self.path.ndim != 2 or self.path.shape[1] != 2 or len(self.path) < 2:
            raise ConfigurationError("path needs at least two waypoints")
        if self.scan_count < 1 or self.beams_per_scan < 1:
            raise ConfigurationError("scan_count and beams_per_scan must be >= 1")
        if not self.max_range > 0:
            raise ConfigurationError(f"max_range must be positive, got {self.max_range}")

    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, xmax, ymin, ymax) envelope of all walls."""
        return (
            float(self.walls[:, 0].min()),
            float(self.walls[:, 2].max()),
            float(self.walls[:, 1].min()),
            float(self.walls[:, 3].max()),
        )


def layout_to_json(layout: EnvironmentLayout) -> str:
    return json.dumps(
        {
            "walls": layout.walls.tolist(),
            "path": layout.path.tolist(),
            "scan_count": layout.scan_count,
            "beams_per_scan": layout.beams_per_scan,
            "max_range": layout.max_range,
        },
        indent=2,
    )


def layout_from_json(text: str) -> EnvironmentLayout:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"layout is not valid JSON: {e.msg}", e.pos) from e
    try:
        return EnvironmentLayout(
            walls=np.asarray(doc["walls"], dtype=np.float64),
            path=np.asarray(doc["path"], dtype=np.float64),
            scan_count=int(doc.get("scan_count", 32)),
            beams_per_scan=int(doc.get("beams_per_scan", 36)),
            max_range=float(doc.get("max_range", 10.0)),
        )
    except KeyError as e:
        raise ParseError(f"layout JSON missing key {e}", 0) from e


def four_room_layout(
    size: float = 20.0,
    wall_thickness: float = 0.3,
    door_half_width: float = 1.0,
    scan_count: int = 44,
    beams_per_scan: int = 36,
    max_range: float = 10.0,
) -> EnvironmentLayout:
    """Square building split into four rooms by cross walls with one door per wall arm.

    The patrol path loops through all four rooms via the doors.
    """
    s, t = size, wall_thickness
    mid_lo, mid_hi = s / 2 - t / 2, s / 2 + t / 2
    q1, q3 = s / 4, 3 * s / 4  # door centers sit off-center on each arm
    d = door_half_width
    walls = [
        (0, 0, s, t),  # outer
        (0, s - t, s, s),
        (0, 0, t, s),
        (s - t, 0, s, s),
        # vertical mid wall, door gaps centered at y = q1 and y = q3
        (mid_lo, t, mid_hi, q1 - d),
        (mid_lo, q1 + d, mid_hi, q3 - d),
        (mid_lo, q3 + d, mid_hi, s - t),
        # horizontal mid wall, door gaps centered at x = q1 and x = q3
        (t, mid_lo, q1 - d, mid_hi),
        (q1 + d, mid_lo, q3 - d, mid_hi),
        (q3 + d, mid_lo, s - t, mid_hi),
    ]
    path = [
        (q1, q1),
        (q1, s / 2),  # through the left door of the horizontal wall
        (q1, q3),
        (s / 2, q3),  # through the upper door of the vertical wall
        (q3, q3),
        (q3, s / 2),  # right door
        (q3, q1),
        (s / 2, q1),  # lower door
        (q1, q1),
    ]
    return EnvironmentLayout(np.asarray(walls), np.asarray(path), scan_count, beams_per_scan, max_range)


class GroundTruth:
    """Exact point-in-wall occupancy oracle for a layout."""

    def __init__(self, walls: np.ndarray):
        self.walls = np.asarray(walls, dtype=np.float64)

    def __call__(self, p: Point2) -> int:
        return int(self.labels(np.asarray([p], dtype=np.float64))[0])

    def labels(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        inside = np.zeros(len(pts), dtype=np.int64)
        for xmin, ymin, xmax, ymax in self.walls:
            inside |= (
                (pts[:, 0] >= xmin) & (pts[:, 0] <= xmax) & (pts[:, 1] >= ymin) & (pts[:, 1] <= ymax)
            )
        return inside


def _cast_rays(origin: np.ndarray, dirs: np.ndarray, walls: np.ndarray, max_range: float):
    """Distance to the nearest wall per ray (slab method), capped at max_range.

    Returns (ranges, max_flags).
    """
    ox, oy = origin
    # Avoid 0/0 for axis-parallel rays that start exactly on a slab plane.
    dx = np.where(np.abs(dirs[:, 0]) < 1e-300, 1e-300, dirs[:, 0])[:, None]
    dy = np.where(np.abs(dirs[:, 1]) < 1e-300, 1e-300, dirs[:, 1])[:, None]
    tx1 = (walls[None, :, 0] - ox) / dx
    tx2 = (walls[None, :, 2] - ox) / dx
    ty1 = (walls[None, :, 1] - oy) / dy
    ty2 = (walls[None, :, 3] - oy) / dy
    tmin = np.maximum(np.minimum(tx1, tx2), np.minimum(ty1, ty2))
    tmax = np.minimum(np.maximum(tx1, tx2), np.maximum(ty1, ty2))
    hit = (tmax >= tmin) & (tmax > 0)
    entry = np.where(hit, np.maximum(tmin, 0.0), np.inf)
    nearest = entry.min(axis=1)
    max_flags = nearest > max_range
    return np.where(max_flags, max_range, nearest), max_flags


def synth_environment(
    layout: EnvironmentLayout,
    noise_sd: float = 0.0,
    seed: int = 0,
) -> tuple[list[BeamRecord], GroundTruth]:
    """Simulate full sweeps from poses spaced evenly along the patrol path.

    Range noise (std noise_sd, meters) applies to returned beams only and is
    clipped to keep ranges in (0, max_range]. Deterministic for a fixed seed.
    """
    if noise_sd < 0 or not np.isfinite(noise_sd):
        raise ConfigurationError(f"noise_sd must be non-negative, got {noise_sd}")
    rng = np.random.default_rng(seed)

    seg = np.diff(layout.path, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    if not np.all(seg_len > 0):
        raise ConfigurationError("path waypoints must be pairwise distinct in sequence")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    arc = np.linspace(0.0, cum[-1], layout.scan_count, endpoint=False)
    seg_idx = np.minimum(np.searchsorted(cum, arc, side="right") - 1, len(seg) - 1)
    frac = (arc - cum[seg_idx]) / seg_len[seg_idx]
    poses_xy = layout.path[seg_idx] + frac[:, None] * seg[seg_idx]
    headings = np.arctan2(seg[seg_idx, 1], seg[seg_idx, 0])

    bearings = -np.pi + 2.0 * np.pi * np.arange(layout.beams_per_scan) / layout.beams_per_scan
    records = []
    for (px, py), theta in zip(poses_xy, headings):
        world = theta + bearings
        dirs = np.column_stack([np.cos(world), np.sin(world)])
        ranges, max_flags = _cast_rays(np.asarray([px, py]), dirs, layout.walls, layout.max_range)
        if noise_sd > 0:
            noise = rng.normal(0.0, noise_sd, size=len(ranges))
            ranges = np.where(max_flags, ranges, np.clip(ranges + noise, 1e-6, layout.max_range))
        records.append(
            BeamRecord(
                (float(px), float(py), float(theta)),
                [(float(b), float(r), bool(f)) for b, r, f in zip(bearings, ranges, max_flags)],
            )
        )
    return records, GroundTruth(layout.walls)


# ---------------------------------------------------------------------------
# Scan splitting
# ---------------------------------------------------------------------------


def split_scans(
    scans: Sequence[ScanRecord], test_fraction: float = 0.1, seed: int = 0
) -> tuple[list[ScanRecord], list[ScanRecord]]:
    """Scan-level train/test split (whole scans move together, no leakage)."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError(f"test_fraction must be in (0,1), got {test_fraction}")
    idx = np.random.default_rng(seed).permutation(len(scans))
    n_test = max(1, int(round(test_fraction * len(scans))))
    test_ids = set(idx[:n_test].tolist())
    train = [s for i, s in enumerate(scans) if i not in test_ids]
    test = [s for i, s in enumerate(scans) if i in test_ids]
    return train, test


def k_fold_scans(
    scans: Sequence[ScanRecord], k: int, seed: int = 0
) -> list[tuple[list[ScanRecord], list[ScanRecord]]]:
    """Scan-level k-fold partition; returns (train, test) per fold."""
    if k < 2 or k > len(scans):
        raise ConfigurationError(f"k must be in [2, n_scans], got {k}")
    idx = np.random.default_rng(seed).permutation(len(scans))
    folds = np.array_split(idx, k)
    out = []
    for f in folds:
        test_ids = set(f.tolist())
        out.append(
            (
                [s for i, s in enumerate(scans) if i not in test_ids],
                [s for i, s in enumerate(scans) if i in test_ids],
            )
        )
    return out


def flatten_samples(scans: Iterable[ScanRecord]) -> list[LabeledSample]:
    return [s for scan in scans for s in scan.samples]


# ---------------------------------------------------------------------------
# Text formats
# ---------------------------------------------------------------------------


def write_samples_csv(path: str | Path, scans: Sequence[ScanRecord]) -> None:
    """Canonical sample CSV: header scan_id,x,y,label; 9 significant digits."""
    with open(path, "w") as f:
        f.write("scan_id,x,y,label\n")
        for scan in scans:
            for s in scan.samples:
                f.write(f"{scan.scan_id},{s.point[0]:.9g},{s.point[1]:.9g},{s.label}\n")


def read_samples_csv(path: str | Path) -> list[ScanRecord]:
    grouped: dict[int, list[LabeledSample]] = {}
    with open(path) as f:
        header = f.readline().strip()
        if header != "scan_id,x,y,label":
            raise ParseError(f"expected header 'scan_id,x,y,label', got {header!r}", 1)
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ParseError(f"expected 4 fields, got {len(parts)}", lineno)
            try:
                scan_id, x, y, label = int(parts[0]), float(parts[1]), float(parts[2]), int(parts[3])
            except ValueError as e:
                raise ParseError(f"bad field: {e}", lineno) from e
            if label not in (0, 1):
                raise ParseError(f"label must be 0 or 1, got {label}", lineno)
            grouped.setdefault(scan_id, []).append(LabeledSample(Point2(x, y), label))
    return [ScanRecord(sid, samples) for sid, samples in sorted(grouped.items())]


def write_beam_log(path: str | Path, beams: Sequence[BeamRecord]) -> None:
    """Secondary input format: POSE x y theta / BEAM bearing range maxflag lines."""
    with open(path, "w") as f:
        for b in beams:
            f.write(f"POSE {b.robot_pose[0]:.9g} {b.robot_pose[1]:.9g} {b.robot_pose[2]:.9g}\n")
            for bearing, rng, flag in b.ranges:
                f.write(f"BEAM {bearing:.9g} {rng:.9g} {int(flag)}\n")


def read_beam_log(path: str | Path) -> list[BeamRecord]:
    beams: list[BeamRecord] = []
    pose: tuple[float, float, float] | None = None
    ranges: list[tuple[float, float, bool]] = []

    def flush():
        if pose is not None:
            beams.append(BeamRecord(pose, list(ranges)))

    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            try:
                if parts[0] == "POSE" and len(parts) == 4:
                    flush()
                    pose = (float(parts[1]), float(parts[2]), float(parts[3]))
                    ranges = []
                elif parts[0] == "BEAM" and len(parts) == 4:
                    if pose is None:
                        raise ParseError("BEAM before any POSE", lineno)
                    ranges.append((float(parts[1]), float(parts[2]), bool(int(parts[3]))))
                else:
                    raise ParseError(f"unrecognized line {parts[0]!r}", lineno)
            except ValueError as e:
                raise ParseError(f"bad number: {e}", lineno) from e
    flush()
    return beams
