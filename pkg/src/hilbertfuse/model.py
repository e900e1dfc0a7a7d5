"""Mean-field Bayesian kernel logistic regression for continuous occupancy.

The map is a diagonal-Gaussian posterior over one weight per feature,
trained sequentially on labeled scan batches with a variational EM scheme
built on the quadratic lower bound of the logistic sigmoid. Training never
forms an m x m matrix: every update is an O(N*m) accumulation, so per-batch
cost stays linear in the feature count.

Label convention: y = 1 means occupied, and predictions return P(occupied).
"""

from __future__ import annotations

import contextlib
import hashlib
import struct
import tracemalloc
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from .errors import BindingError, ConfigurationError, ParseError
from .features import FeatureBasis, Point2, project_many

MAGIC = b"FBHM"
FORMAT_VERSION = 1

# Rows per extended-precision accumulation chunk. Bounds temporary buffers
# to chunk*m longdoubles so training never rivals an m x m allocation.
_CHUNK = 64

# expit hits exactly 1.0 in float64 just past +36, but stays a positive
# subnormal down to about -744; the asymmetric clamp keeps predictions
# strictly inside (0, 1) while preserving ranking resolution near 0.
_LOGIT_HI = 36.0
_LOGIT_LO = -700.0


class LabeledSample(NamedTuple):
    point: Point2
    label: int  # 1 = occupied, 0 = free


@dataclass(frozen=True)
class TrainConfig:
    prior_mean: float = 0.0
    prior_variance: float = 1e4
    em_iterations: int = 3
    z_floor: float = 1e-7

    def __post_init__(self):
        if not (np.isfinite(self.prior_variance) and self.prior_variance > 0):
            raise ConfigurationError(f"prior_variance must be positive, got {self.prior_variance}")
        if not np.isfinite(self.prior_mean):
            raise ConfigurationError(f"prior_mean must be finite, got {self.prior_mean}")
        if not 1 <= self.em_iterations <= 0xFFFF:  # serialized as u16
            raise ConfigurationError(f"em_iterations must be in [1, 65535], got {self.em_iterations}")
        if not (np.isfinite(self.z_floor) and self.z_floor > 0):
            raise ConfigurationError(f"z_floor must be positive, got {self.z_floor}")


@dataclass
class WeightPosterior:
    """Per-weight Gaussian parameters bound to one feature basis."""

    means: np.ndarray
    variances: np.ndarray
    basis_fingerprint: str

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if self.means.shape != self.variances.shape or self.means.ndim != 1:
            raise ConfigurationError("means and variances must be 1-D arrays of equal length")
        if not np.all(np.isfinite(self.means)):
            raise ConfigurationError("posterior means must be finite")
        if not np.all(np.isfinite(self.variances) & (self.variances > 0)):
            raise ConfigurationError("posterior variances must be positive and finite")

    @property
    def m(self) -> int:
        return len(self.means)


def new_map(basis: FeatureBasis, cfg: TrainConfig) -> WeightPosterior:
    """Posterior initialized at the prior: every weight N(prior_mean, prior_variance)."""
    m = basis.m
    return WeightPosterior(
        means=np.full(m, cfg.prior_mean),
        variances=np.full(m, cfg.prior_variance),
        basis_fingerprint=basis.fingerprint,
    )


def lambda_fn(z, z_floor: float = 1e-7):
    """Coefficient of the quadratic sigmoid lower bound: (sigmoid(z) - 1/2) / (2z).

    Even, positive, maximal at z=0 with value 1/8. Evaluated at |z| so the
    evenness is exact in floats. Below z_floor the direct quotient is 0/0,
    so the series 1/8 - z^2/96 takes over.
    """
    za = np.abs(np.asarray(z, dtype=np.float64))
    small = za <= z_floor
    safe = np.where(small, 1.0, za)
    out = np.where(small, 0.125 - za * za / 96.0, (expit(safe) - 0.5) / (2.0 * safe))
    return float(out) if out.ndim == 0 else out


def _check_binding(posterior: WeightPosterior, basis: FeatureBasis) -> None:
    if posterior.basis_fingerprint != basis.fingerprint:
        raise BindingError(
            f"posterior bound to basis {posterior.basis_fingerprint[:12]}..., "
            f"got basis {basis.fingerprint[:12]}..."
        )
    if posterior.m != basis.m:
        raise BindingError(f"posterior has {posterior.m} weights, basis has {basis.m} features")


def samples_to_arrays(batch: Sequence[LabeledSample]) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray([(s.point[0], s.point[1]) for s in batch], dtype=np.float64)
    y = np.asarray([s.label for s in batch], dtype=np.float64)
    return pts, y


def _accumulate(mat: np.ndarray, weights: np.ndarray, square: bool = False) -> np.ndarray:
    """sum_n weights[n] * mat[n, :] (optionally mat squared), accumulated in
    extended precision so batch order cannot perturb the float64 result."""
    acc = np.zeros(mat.shape[1], dtype=np.longdouble)
    for i in range(0, len(mat), _CHUNK):
        chunk = mat[i : i + _CHUNK].astype(np.longdouble)
        if square:
            chunk = chunk * chunk
        acc += chunk.T @ weights[i : i + _CHUNK].astype(np.longdouble)
    return acc.astype(np.float64)


def em_update(
    posterior: WeightPosterior,
    basis: FeatureBasis,
    batch: Sequence[LabeledSample],
    cfg: TrainConfig,
) -> WeightPosterior:
    """One sequential training step on a scan batch; returns a new posterior.

    The incoming posterior acts as the prior of this step. Each EM iteration
    refreshes the bound parameters z from the current posterior (initially the
    incoming one) and recomputes the weight posterior in closed form:

        precision_t = prior_precision_t + 2 * sum_n lambda(z_n) * phi_nt^2
        mean_t      = variance_t * (prior_precision_t * prior_mean_t
                                    + sum_n (y_n - 1/2) * phi_nt)
        z_n^2       = sum_t phi_nt^2 * (variance_t + mean_t^2)

    Precision increments are non-negative, so every weight's variance is
    non-increasing across calls. An empty batch is a no-op.
    """
    _check_binding(posterior, basis)
    if len(batch) == 0:
        return posterior

    pts, y = samples_to_arrays(batch)
    if not np.all(np.isfinite(pts)):
        raise ConfigurationError("batch contains non-finite coordinates")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ConfigurationError("labels must be 0 or 1")

    phi = project_many(basis, pts)
    prior_prec = 1.0 / posterior.variances
    prior_term = prior_prec * posterior.means
    signal = _accumulate(phi, y - 0.5)  # constant across EM iterations

    means, variances = posterior.means, posterior.variances
    for _ in range(cfg.em_iterations):
        z = np.sqrt(np.einsum("nt,nt,t->n", phi, phi, variances + means * means))
        lam = lambda_fn(z, cfg.z_floor)
        variances = 1.0 / (prior_prec + 2.0 * _accumulate(phi, lam, square=True))
        means = variances * (prior_term + signal)

    return WeightPosterior(means, variances, posterior.basis_fingerprint)


def predict(posterior: WeightPosterior, basis: FeatureBasis, p: Point2) -> float:
    """P(occupied) at one coordinate."""
    return float(predict_many(posterior, basis, np.asarray([p], dtype=np.float64))[0])


def predict_many(posterior: WeightPosterior, basis: FeatureBasis, points: np.ndarray) -> np.ndarray:
    """Moderated predictive probability at each of n coordinates.

    Uses the probit-style correction sigmoid(a / sqrt(1 + pi*v/8)) with
    activation a = mu . phi and propagated variance v = sum_t var_t phi_t^2,
    so weight uncertainty pulls predictions toward 1/2. Output is strictly
    inside (0, 1).
    """
    _check_binding(posterior, basis)
    phi = project_many(basis, points)
    a = phi @ posterior.means
    v = np.einsum("nt,nt,t->n", phi, phi, posterior.variances)
    activation = a / np.sqrt(1.0 + (np.pi / 8.0) * v)
    return expit(np.clip(activation, _LOGIT_LO, _LOGIT_HI))


def map_checksum(posterior: WeightPosterior) -> str:
    """Stable hex digest of the posterior's parameters, for transcripts/reports."""
    h = hashlib.sha256()
    h.update(posterior.basis_fingerprint.encode())
    h.update(posterior.means.astype("<f8").tobytes())
    h.update(posterior.variances.astype("<f8").tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Binary model format
#
#   magic "FBHM" | version u16 | basis block | config block | weights block
#   basis block:  count u32, gamma f64, bias flag u8, count * (x f64, y f64)
#   config block: prior_mean f64, prior_variance f64, em_iterations u16
#   weights block: m * (mean f64, variance f64), m = count + bias flag
#
# Everything little-endian. Total size = 37 + 16*count + 16*m bytes.
# z_floor is a numerical knob, not part of the wire format; deserialization
# restores its default.
# ---------------------------------------------------------------------------


def serialized_size(basis: FeatureBasis) -> int:
    """Exact byte count serialize() will produce for a model on this basis."""
    return 37 + 16 * len(basis.inducing_points) + 16 * basis.m


def serialize(posterior: WeightPosterior, basis: FeatureBasis, cfg: TrainConfig) -> bytes:
    _check_binding(posterior, basis)
    count = len(basis.inducing_points)
    if count == 0:
        raise ConfigurationError("cannot serialize an empty basis")
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", FORMAT_VERSION)
    out += struct.pack("<IdB", count, basis.gamma, int(basis.include_bias))
    out += basis.inducing_points.astype("<f8").tobytes()
    out += struct.pack("<ddH", cfg.prior_mean, cfg.prior_variance, cfg.em_iterations)
    pairs = np.column_stack([posterior.means, posterior.variances]).astype("<f8")
    out += pairs.tobytes()
    return bytes(out)


def deserialize(data: bytes) -> tuple[WeightPosterior, FeatureBasis, TrainConfig]:
    """Inverse of serialize(); raises ParseError with the failing byte offset."""
    off = 0

    def take(n: int, what: str) -> bytes:
        nonlocal off
        if off + n > len(data):
            raise ParseError(f"truncated stream while reading {what}", off)
        chunk = data[off : off + n]
        off += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise ParseError("bad magic, expected FBHM", 0)
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format version {version}", 4)

    count, gamma, bias = struct.unpack("<IdB", take(13, "basis header"))
    if count == 0:
        raise ParseError("basis has zero inducing points", 6)
    pts_off = off
    pts = np.frombuffer(take(16 * count, "inducing points"), dtype="<f8").reshape(count, 2)
    try:
        basis = FeatureBasis(pts, gamma, bool(bias))
    except ConfigurationError as e:
        raise ParseError(f"invalid basis block: {e}", pts_off) from e

    cfg_off = off
    prior_mean, prior_variance, em_iterations = struct.unpack("<ddH", take(18, "config block"))
    try:
        cfg = TrainConfig(prior_mean, prior_variance, em_iterations)
    except ConfigurationError as e:
        raise ParseError(f"invalid config block: {e}", cfg_off) from e

    m = count + (1 if bias else 0)
    weights_off = off
    pairs = np.frombuffer(take(16 * m, "weights block"), dtype="<f8").reshape(m, 2)
    if off != len(data):
        raise ParseError(f"{len(data) - off} trailing bytes after weights block", off)
    if not np.all(np.isfinite(pairs)):
        raise ParseError("non-finite weight parameters", weights_off)
    if not np.all(pairs[:, 1] > 0):
        bad = int(np.argmax(~(pairs[:, 1] > 0)))
        raise ParseError(f"non-positive variance for weight {bad}", weights_off + 16 * bad + 8)

    posterior = WeightPosterior(pairs[:, 0].copy(), pairs[:, 1].copy(), basis.fingerprint)
    return posterior, basis, cfg


@contextlib.contextmanager
def measure_peak_allocation():
    """Audit hook: report peak traced heap growth (bytes) inside the block.

    numpy registers its buffers with tracemalloc, so an m x m temporary
    anywhere in a training call shows up as at least 8*m*m peak bytes.
    """

    class _Peak:
        peak_bytes: int | None = None

    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    tracemalloc.reset_peak()
    base, _ = tracemalloc.get_traced_memory()
    holder = _Peak()
    try:
        yield holder
    finally:
        _, peak = tracemalloc.get_traced_memory()
        holder.peak_bytes = max(0, peak - base)
        if not was_tracing:
            tracemalloc.stop()
