"""Squared-exponential feature projection onto a fixed set of inducing points.

A coordinate x is mapped to the vector of kernel evaluations against every
inducing point, exp(-gamma * ||x - x_hat||^2), optionally followed by a
constant bias feature. All downstream map models operate purely in this
feature space.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError

_COORD_EPS = 1e-9


class Point2(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class FeatureBasis:
    """Immutable inducing-point layout plus kernel length-scale.

    inducing_points: (c, 2) float64 array of xy coordinates, all distinct.
    gamma: inverse squared length-scale, > 0.
    include_bias: append a constant-1 feature after the kernel features.
    """

    inducing_points: np.ndarray
    gamma: float
    include_bias: bool = False
    fingerprint: str = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.inducing_points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] == 0:
            raise ConfigurationError("inducing_points must be a non-empty (c, 2) array")
        if not np.all(np.isfinite(pts)):
            raise ConfigurationError("inducing points must be finite")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigurationError(f"gamma must be positive and finite, got {self.gamma}")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise ConfigurationError("inducing points must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "inducing_points", pts)
        object.__setattr__(self, "fingerprint", hashlib.sha256(self._canonical_bytes()).hexdigest())

    @property
    def m(self) -> int:
        """Feature dimension: inducing points plus the optional bias."""
        return len(self.inducing_points) + (1 if self.include_bias else 0)

    def _canonical_bytes(self) -> bytes:
        head = struct.pack("<IdB", len(self.inducing_points), self.gamma, int(self.include_bias))
        return head + self.inducing_points.astype("<f8").tobytes()


def make_grid_basis(
    xmin: float,
    xmax: float,
    ymin: float,
    ymax: float,
    spacing: float,
    gamma: float,
    include_bias: bool = False,
) -> FeatureBasis:
    """Regular lattice of inducing points covering [xmin,xmax] x [ymin,ymax].

    Both boundary rows/columns are always present; when the spacing does not
    divide the extent the far boundary is appended with a clamped (shorter)
    last gap. Points are ordered row-major with x varying fastest.
    """
    for name, v in (("xmin", xmin), ("xmax", xmax), ("ymin", ymin), ("ymax", ymax), ("spacing", spacing)):
        if not np.isfinite(v):
            raise ConfigurationError(f"{name} must be finite, got {v}")
    if xmax <= xmin or ymax <= ymin:
        raise ConfigurationError("empty extent: require xmax > xmin and ymax > ymin")
    if spacing <= 0:
        raise ConfigurationError(f"spacing must be positive, got {spacing}")
    if spacing > (xmax - xmin) or spacing > (ymax - ymin):
        raise ConfigurationError("spacing exceeds the extent; no lattice fits")

    xs = _axis_coords(xmin, xmax, spacing)
    ys = _axis_coords(ymin, ymax, spacing)
    gx, gy = np.meshgrid(xs, ys)  # y outer, x fastest
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    return FeatureBasis(pts, gamma, include_bias)


def _axis_coords(lo: float, hi: float, spacing: float) -> np.ndarray:
    extent = hi - lo
    n = int(np.floor(extent / spacing + _COORD_EPS)) + 1
    coords = lo + spacing * np.arange(n)
    if coords[-1] < hi - _COORD_EPS * max(1.0, extent):
        coords = np.append(coords, hi)
    else:
        coords[-1] = hi  # snap away float drift so the boundary is exact
    return coords


def project(basis: FeatureBasis, p: Point2) -> np.ndarray:
    """Feature vector of a single point: exp(-gamma * squared distance) per inducing point."""
    if not (np.isfinite(p[0]) and np.isfinite(p[1])):
        raise ConfigurationError(f"point must be finite, got {p}")
    return project_many(basis, np.asarray([p], dtype=np.float64))[0]


def project_many(basis: FeatureBasis, points: np.ndarray) -> np.ndarray:
    """Vectorized projection of an (n, 2) coordinate array to an (n, m) feature matrix.

    Entries lie in (0, 1]; exp underflows to exactly 0.0 once
    gamma * distance^2 exceeds ~745 (no influence at that remove anyway).
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ConfigurationError("points must have shape (n, 2)")
    d2 = (pts[:, 0:1] - basis.inducing_points[:, 0]) ** 2 + (pts[:, 1:2] - basis.inducing_points[:, 1]) ** 2
    phi = np.exp(-basis.gamma * d2)
    if basis.include_bias:
        phi = np.concatenate([phi, np.ones((len(pts), 1))], axis=1)
    return phi
