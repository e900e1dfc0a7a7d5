"""Log-odds occupancy grid: the fixed-resolution baseline for quality and
memory comparisons against the continuous map."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, ParseError
from .features import Point2
from .model import LabeledSample

GRID_MAGIC = b"OGRD"
GRID_VERSION = 1
GRID_HEADER_BYTES = 47

# Saturation bound on accumulated log-odds; keeps recovered probabilities
# strictly inside (0, 1).
LOGODDS_CLAMP = 30.0


def logit(p: float) -> float:
    """ln(p / (1-p)); the additive update unit of a cell."""
    if not 0.0 < p < 1.0:
        raise ConfigurationError(f"probability must be in (0,1), got {p}")
    return float(np.log(p) - np.log1p(-p))


@dataclass
class GridMap:
    origin: Point2
    resolution: float
    width: int
    height: int
    prior_p: float = 0.5
    logodds: np.ndarray = field(default=None)  # (height, width), row 0 at origin.y
    skipped_samples: int = 0

    def __post_init__(self):
        if self.resolution <= 0 or not np.isfinite(self.resolution):
            raise ConfigurationError(f"resolution must be positive, got {self.resolution}")
        if self.width < 1 or self.height < 1:
            raise ConfigurationError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not 0.0 < self.prior_p < 1.0:
            raise ConfigurationError(f"prior_p must be in (0,1), got {self.prior_p}")
        if self.logodds is None:
            self.logodds = np.full((self.height, self.width), logit(self.prior_p))
        self.logodds = np.asarray(self.logodds, dtype=np.float64)
        if self.logodds.shape != (self.height, self.width):
            raise ConfigurationError("logodds array shape must be (height, width)")

    @property
    def extent(self) -> tuple[float, float, float, float]:
        return (
            self.origin.x,
            self.origin.x + self.width * self.resolution,
            self.origin.y,
            self.origin.y + self.height * self.resolution,
        )


def world_to_cell(g: GridMap, p: Point2) -> tuple[int, int] | None:
    """Cell (ix, iy) containing p; None outside the extent. Points exactly on
    the max boundary clamp to the edge cell."""
    xmin, xmax, ymin, ymax = g.extent
    if not (xmin <= p[0] <= xmax and ymin <= p[1] <= ymax):
        return None
    ix = min(int((p[0] - xmin) / g.resolution), g.width - 1)
    iy = min(int((p[1] - ymin) / g.resolution), g.height - 1)
    return ix, iy


def update_cell(g: GridMap, cell: tuple[int, int], p_inverse: float) -> None:
    """Add the evidence logit(p_inverse) - logit(prior) to one cell."""
    ix, iy = cell
    if not (0 <= ix < g.width and 0 <= iy < g.height):
        raise IndexError(f"cell {cell} outside {g.width}x{g.height} grid")
    lo = g.logodds[iy, ix] + logit(p_inverse) - logit(g.prior_p)
    g.logodds[iy, ix] = np.clip(lo, -LOGODDS_CLAMP, LOGODDS_CLAMP)


def query_cell(g: GridMap, cell: tuple[int, int]) -> float:
    ix, iy = cell
    if not (0 <= ix < g.width and 0 <= iy < g.height):
        raise IndexError(f"cell {cell} outside {g.width}x{g.height} grid")
    return float(expit(g.logodds[iy, ix]))


def query_points(g: GridMap, points: np.ndarray, outside: float = 0.5) -> np.ndarray:
    """Probabilities at world coordinates; `outside` for points off the grid."""
    pts = np.asarray(points, dtype=np.float64)
    out = np.full(len(pts), outside)
    xmin, xmax, ymin, ymax = g.extent
    ok = (pts[:, 0] >= xmin) & (pts[:, 0] <= xmax) & (pts[:, 1] >= ymin) & (pts[:, 1] <= ymax)
    ix = np.minimum(((pts[ok, 0] - xmin) / g.resolution).astype(int), g.width - 1)
    iy = np.minimum(((pts[ok, 1] - ymin) / g.resolution).astype(int), g.height - 1)
    out[ok] = expit(g.logodds[iy, ix])
    return out


def ingest_samples(
    g: GridMap,
    batch: Sequence[LabeledSample],
    hit_p: float = 0.7,
    miss_p: float = 0.3,
) -> int:
    """Apply a batch of labeled points: occupied samples add hit_p evidence,
    free samples miss_p. Returns the number of out-of-extent samples skipped.

    Evidence is binned into per-cell integer counts first, so any permutation
    of the batch produces bit-identical log-odds.
    """
    if not 0.5 < hit_p < 1.0:
        raise ConfigurationError(f"hit_p must be in (0.5, 1), got {hit_p}")
    if not 0.0 < miss_p < 0.5:
        raise ConfigurationError(f"miss_p must be in (0, 0.5), got {miss_p}")
    if len(batch) == 0:
        return 0

    pts = np.asarray([(s.point[0], s.point[1]) for s in batch], dtype=np.float64)
    labels = np.asarray([s.label for s in batch], dtype=np.int64)
    xmin, xmax, ymin, ymax = g.extent
    ok = (pts[:, 0] >= xmin) & (pts[:, 0] <= xmax) & (pts[:, 1] >= ymin) & (pts[:, 1] <= ymax)
    skipped = int(np.count_nonzero(~ok))
    g.skipped_samples += skipped

    ix = np.minimum(((pts[ok, 0] - xmin) / g.resolution).astype(int), g.width - 1)
    iy = np.minimum(((pts[ok, 1] - ymin) / g.resolution).astype(int), g.height - 1)
    lab = labels[ok]
    hits = np.zeros((g.height, g.width), dtype=np.int64)
    misses = np.zeros((g.height, g.width), dtype=np.int64)
    np.add.at(hits, (iy[lab == 1], ix[lab == 1]), 1)
    np.add.at(misses, (iy[lab == 0], ix[lab == 0]), 1)

    prior_lo = logit(g.prior_p)
    delta = hits * (logit(hit_p) - prior_lo) + misses * (logit(miss_p) - prior_lo)
    g.logodds = np.clip(g.logodds + delta, -LOGODDS_CLAMP, LOGODDS_CLAMP)
    return skipped


# ---------------------------------------------------------------------------
# Binary grid format
#
#   magic "OGRD" | version u16 | origin x f64 | origin y f64 | resolution f64 |
#   width u32 | height u32 | cell format u8 (8 = f64 log-odds, 1 = u8
#   quantized probability) | prior f64 | cells row-major
#
# Little-endian; size = 47 + cell_bytes * width * height.
# ---------------------------------------------------------------------------


def grid_to_bytes(g: GridMap, cell_bytes: int = 8) -> bytes:
    if cell_bytes not in (1, 8):
        raise ConfigurationError(f"cell_bytes must be 1 or 8, got {cell_bytes}")
    head = GRID_MAGIC + struct.pack(
        "<HdddIIBd", GRID_VERSION, g.origin.x, g.origin.y, g.resolution, g.width, g.height, cell_bytes, g.prior_p
    )
    if cell_bytes == 8:
        payload = g.logodds.astype("<f8").tobytes()
    else:
        probs = expit(g.logodds)
        payload = np.rint(probs * 255.0).astype(np.uint8).tobytes()
    return head + payload


def grid_from_bytes(data: bytes) -> GridMap:
    if len(data) < GRID_HEADER_BYTES:
        raise ParseError("truncated grid header", len(data))
    if data[:4] != GRID_MAGIC:
        raise ParseError("bad magic, expected OGRD", 0)
    version, ox, oy, res, width, height, cell_bytes, prior = struct.unpack("<HdddIIBd", data[4:GRID_HEADER_BYTES])
    if version != GRID_VERSION:
        raise ParseError(f"unsupported grid version {version}", 4)
    if width == 0 or height == 0:
        raise ParseError(f"degenerate {width}x{height} grid", 30)
    if cell_bytes not in (1, 8):
        raise ParseError(f"unknown cell format {cell_bytes}", 38)
    expected = GRID_HEADER_BYTES + cell_bytes * width * height
    if len(data) != expected:
        raise ParseError(f"expected {expected} bytes, got {len(data)}", min(len(data), expected))
    payload = data[GRID_HEADER_BYTES:]
    if cell_bytes == 8:
        lo = np.frombuffer(payload, dtype="<f8").reshape(height, width).copy()
    else:
        # Lossy import: quantized probability back to clamped log-odds.
        q = np.frombuffer(payload, dtype=np.uint8).reshape(height, width) / 255.0
        q = np.clip(q, expit(-LOGODDS_CLAMP), expit(LOGODDS_CLAMP))
        lo = np.log(q) - np.log1p(-q)
    return GridMap(Point2(ox, oy), res, int(width), int(height), prior, lo)


def validate_grid_bytes(data: bytes) -> tuple[int, int, int]:
    """Parse and sanity-check a serialized grid; returns (width, height, cell_bytes)."""
    g = grid_from_bytes(data)
    cell_bytes = (len(data) - GRID_HEADER_BYTES) // (g.width * g.height)
    return g.width, g.height, cell_bytes


def probabilities_to_pgm(probs: np.ndarray) -> bytes:
    """Binary PGM (P5) of a probability field; row 0 of the array renders at
    the bottom, matching world y increasing upward."""
    arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise ConfigurationError("probability field must be a non-empty 2-D array")
    pix = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode()
    return header + pix[::-1].tobytes()


def grid_to_pgm(g: GridMap) -> bytes:
    return probabilities_to_pgm(expit(g.logodds))
