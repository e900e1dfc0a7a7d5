"""Decentralized merging of independently trained weight posteriors.

Per weight, local Gaussian estimates are combined by conflation: the
normalized product of the densities, which for Gaussians is precision
weighted averaging. Repeated merge rounds avoid double counting the shared
global map by exchanging *increments*: the Gaussian factor that, conflated
with the previous global snapshot, reproduces an agent's freshly trained
posterior. Weights whose variance never left the neighborhood of the prior
carry no evidence and are filtered out of the merge.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import BindingError, ConfigurationError, ParseError
from .features import FeatureBasis
from .model import TrainConfig, WeightPosterior, em_update, map_checksum, new_map, serialize

INCREMENT_MAGIC = b"FBHI"
INCREMENT_VERSION = 1

# Relative precision slack below which further training gained nothing and
# the increment formula would divide by ~0.
NO_INFORMATION_REL_EPS = 1e-12


@dataclass(frozen=True)
class GaussianParam:
    mean: float
    variance: float

    def __post_init__(self):
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ConfigurationError(f"variance must be positive and finite, got {self.variance}")
        if not np.isfinite(self.mean):
            raise ConfigurationError(f"mean must be finite, got {self.mean}")


@dataclass(frozen=True)
class FilterPolicy:
    """Variance threshold separating trained weights from near-prior ones."""

    variance_threshold: float

    def __post_init__(self):
        if not (np.isfinite(self.variance_threshold) and self.variance_threshold > 0):
            raise ConfigurationError(f"variance_threshold must be positive, got {self.variance_threshold}")

    @classmethod
    def for_prior(cls, prior_variance: float, fraction: float = 0.5) -> "FilterPolicy":
        return cls(fraction * prior_variance)


class Role(enum.Enum):
    FULL_ESTIMATE = "full"
    INCREMENT = "increment"


def conflate(estimates: Sequence[GaussianParam]) -> GaussianParam:
    """Normalized product of Gaussian densities.

    variance = 1 / sum(1/var_i), mean = sum(mean_i/var_i) / sum(1/var_i).
    Sums use exact (fsum) accumulation, so the result is independent of the
    order of the estimates.
    """
    if len(estimates) == 0:
        raise ValueError("conflate requires at least one estimate")
    prec = math.fsum(1.0 / e.variance for e in estimates)
    weighted = math.fsum(e.mean / e.variance for e in estimates)
    return GaussianParam(weighted / prec, 1.0 / prec)


def get_increment(
    prior: GaussianParam,
    posterior: GaussianParam,
    rel_epsilon: float = NO_INFORMATION_REL_EPS,
) -> GaussianParam | None:
    """Gaussian factor whose conflation with `prior` reproduces `posterior`.

    variance = var_post * var_prior / (var_prior - var_post)
    mean     = mean_post + (variance / var_prior) * (mean_post - mean_prior)

    Returns None (no information) when the posterior's variance has not
    dropped below the prior's by at least rel_epsilon * var_prior: such a
    factor would be a near-infinite-variance unit under conflation.
    """
    if posterior.variance >= prior.variance - rel_epsilon * prior.variance:
        return None
    variance = posterior.variance * prior.variance / (prior.variance - posterior.variance)
    mean = posterior.mean + (variance / prior.variance) * (posterior.mean - prior.mean)
    return GaussianParam(mean, variance)


@dataclass
class MapIncrement:
    """Per-weight increments of a whole posterior; carried marks informative weights."""

    means: np.ndarray
    variances: np.ndarray
    carried: np.ndarray
    basis_fingerprint: str

    def __post_init__(self):
        self.carried = np.asarray(self.carried, dtype=bool)
        if not (self.means.shape == self.variances.shape == self.carried.shape):
            raise ConfigurationError("increment arrays must share one shape")

    @property
    def m(self) -> int:
        return len(self.means)

    @property
    def carried_count(self) -> int:
        return int(np.count_nonzero(self.carried))


def map_increment(
    snapshot: WeightPosterior,
    trained: WeightPosterior,
    rel_epsilon: float = NO_INFORMATION_REL_EPS,
) -> MapIncrement:
    """Vectorized get_increment of a trained posterior against its global snapshot."""
    if snapshot.basis_fingerprint != trained.basis_fingerprint:
        raise BindingError("snapshot and trained posterior are bound to different bases")
    pv, tv = snapshot.variances, trained.variances
    carried = tv < (pv - rel_epsilon * pv)
    safe_diff = np.where(carried, pv - tv, 1.0)
    variance = np.where(carried, (tv * pv) / safe_diff, 1.0)
    mean = np.where(carried, trained.means + (variance / pv) * (trained.means - snapshot.means), 0.0)
    return MapIncrement(mean, variance, carried, trained.basis_fingerprint)


def fuse_maps(
    contributions: Sequence[tuple[WeightPosterior | MapIncrement, Role]],
    prior_mean: float,
    prior_variance: float,
    policy: FilterPolicy,
) -> WeightPosterior:
    """Merge local estimates into a global posterior, weight by weight.

    A FULL_ESTIMATE contributes a weight only when its variance is below the
    policy threshold; an INCREMENT contributes wherever it carried
    information. A weight with a single contribution passes through exactly;
    with none it falls back to the prior; otherwise the contributions are
    conflated.
    """
    if len(contributions) == 0:
        raise ValueError("fuse_maps requires at least one contribution")

    fingerprints = {c.basis_fingerprint for c, _ in contributions}
    if len(fingerprints) != 1:
        raise BindingError(f"contributions span {len(fingerprints)} distinct bases")
    fingerprint = fingerprints.pop()
    sizes = {c.m for c, _ in contributions}
    if len(sizes) != 1:
        raise BindingError("contributions disagree on weight count")
    m = sizes.pop()

    means = np.empty((len(contributions), m))
    variances = np.empty((len(contributions), m))
    included = np.empty((len(contributions), m), dtype=bool)
    for i, (contrib, role) in enumerate(contributions):
        if role is Role.FULL_ESTIMATE:
            if not isinstance(contrib, WeightPosterior):
                raise TypeError("FULL_ESTIMATE contribution must be a WeightPosterior")
            included[i] = contrib.variances < policy.variance_threshold
        elif role is Role.INCREMENT:
            if not isinstance(contrib, MapIncrement):
                raise TypeError("INCREMENT contribution must be a MapIncrement")
            included[i] = contrib.carried
        else:
            raise TypeError(f"unknown role {role!r}")
        means[i] = contrib.means
        variances[i] = contrib.variances

    counts = included.sum(axis=0)
    out_mean = np.full(m, prior_mean)
    out_var = np.full(m, prior_variance)

    # Exactly one contribution: the masked sum has a single non-zero term,
    # so the source values pass through bit-exactly.
    single = counts == 1
    if np.any(single):
        out_mean[single] = np.sum(np.where(included, means, 0.0), axis=0)[single]
        out_var[single] = np.sum(np.where(included, variances, 0.0), axis=0)[single]

    multi = counts >= 2
    if np.any(multi):
        prec = np.where(included, 1.0 / variances, 0.0)
        prec_sum = prec.sum(axis=0)
        weighted_sum = np.where(included, means / variances, 0.0).sum(axis=0)
        out_mean[multi] = weighted_sum[multi] / prec_sum[multi]
        out_var[multi] = 1.0 / prec_sum[multi]

    return WeightPosterior(out_mean, out_var, fingerprint)


# ---------------------------------------------------------------------------
# Increment wire format
#
#   magic "FBHI" | version u16 | basis fingerprint (32 raw bytes) |
#   total weight count u32 | carried count u32 |
#   carried * (index u32, mean f64, variance f64)
#
# Little-endian; 46 + 20 * carried bytes.
# ---------------------------------------------------------------------------


def encode_increment(inc: MapIncrement) -> bytes:
    idx = np.flatnonzero(inc.carried).astype(np.uint32)
    out = bytearray()
    out += INCREMENT_MAGIC
    out += struct.pack("<H", INCREMENT_VERSION)
    out += bytes.fromhex(inc.basis_fingerprint)
    out += struct.pack("<II", inc.m, len(idx))
    triples = np.empty(len(idx), dtype=[("i", "<u4"), ("mu", "<f8"), ("var", "<f8")])
    triples["i"] = idx
    triples["mu"] = inc.means[idx]
    triples["var"] = inc.variances[idx]
    out += triples.tobytes()
    return bytes(out)


def decode_increment(data: bytes) -> MapIncrement:
    if len(data) < 46:
        raise ParseError("truncated increment header", len(data))
    if data[:4] != INCREMENT_MAGIC:
        raise ParseError("bad magic, expected FBHI", 0)
    (version,) = struct.unpack("<H", data[4:6])
    if version != INCREMENT_VERSION:
        raise ParseError(f"unsupported increment version {version}", 4)
    fingerprint = data[6:38].hex()
    m, k = struct.unpack("<II", data[38:46])
    expected = 46 + 20 * k
    if len(data) != expected:
        raise ParseError(f"expected {expected} bytes, got {len(data)}", min(len(data), expected))
    triples = np.frombuffer(data[46:], dtype=[("i", "<u4"), ("mu", "<f8"), ("var", "<f8")])
    idx = triples["i"].astype(np.int64)
    if k and (idx.max(initial=-1) >= m or np.any(np.diff(idx) <= 0)):
        raise ParseError("carried indices must be strictly increasing and < m", 46)
    if np.any(triples["var"] <= 0) or not np.all(np.isfinite(triples["var"])):
        raise ParseError("increment variances must be positive", 46)
    means = np.zeros(m)
    variances = np.ones(m)
    carried = np.zeros(m, dtype=bool)
    means[idx] = triples["mu"]
    variances[idx] = triples["var"]
    carried[idx] = True
    return MapIncrement(means, variances, carried, fingerprint)


# ---------------------------------------------------------------------------
# Round-based sequential fusion
# ---------------------------------------------------------------------------


@dataclass
class FusionRound:
    """Transcript record of one merge round."""

    round_index: int
    participants: list = field(default_factory=list)  # agent ids that contributed
    kinds: dict = field(default_factory=dict)  # agent id -> "full" | "increment"
    bytes_by_agent: dict = field(default_factory=dict)
    carried_by_agent: dict = field(default_factory=dict)  # informative weights sent
    skipped: list = field(default_factory=list)  # agent ids over the bandwidth cap
    skipped_bytes: dict = field(default_factory=dict)  # attempted size per skipped agent
    global_checksum: str = ""

    def to_json_dict(self) -> dict:
        return {
            "round": self.round_index,
            "participants": list(self.participants),
            "kinds": dict(self.kinds),
            "bytes": dict(self.bytes_by_agent),
            "carried_weights": dict(self.carried_by_agent),
            "skipped": list(self.skipped),
            "skipped_bytes": dict(self.skipped_bytes),
            "global_checksum": self.global_checksum,
        }


def sequential_fusion(
    agents: Sequence,
    rounds: int,
    trainer: Callable[[int, int], Iterable[Sequence]],
    policy: FilterPolicy,
    basis: FeatureBasis,
    cfg: TrainConfig,
    bandwidth_cap: int | None = None,
    on_round: Callable[[FusionRound, WeightPosterior], None] | None = None,
) -> list[WeightPosterior]:
    """Run the round-synchronous train-then-merge protocol.

    Each agent must expose mutable attributes `agent_id`, `local_map`,
    `snapshot` (last received global, None before the first fusion) and
    `bytes_sent`. `trainer(agent_index, round_index)` yields the sample
    batches that agent trains on during that round.

    Per round: every agent trains its local copy; an agent that has never
    fused contributes its full posterior, otherwise the increment of its
    local copy against its snapshot. The new global conflates the previous
    global (counted exactly once as the common information) with all
    contributions, applying the filter policy to full estimates. Every
    contributing agent then adopts the global as local copy and snapshot.
    An agent whose contribution exceeds bandwidth_cap is skipped for the
    round: it neither sends nor receives, keeping its local training and
    old snapshot valid for the next round.

    With a single agent the protocol degenerates to solo training and each
    round's global is that agent's local map, verbatim.

    Returns the global posterior after each round.
    """
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    if len(agents) == 0:
        raise ValueError("sequential_fusion requires at least one agent")

    prev_global: WeightPosterior | None = None
    per_round: list[WeightPosterior] = []

    for r in range(rounds):
        record = FusionRound(round_index=r)
        sent: list[tuple[int, WeightPosterior | MapIncrement, Role]] = []

        for idx, agent in enumerate(agents):
            for batch in trainer(idx, r):
                agent.local_map = em_update(agent.local_map, basis, batch, cfg)
            if agent.snapshot is None:
                payload: WeightPosterior | MapIncrement = agent.local_map
                role = Role.FULL_ESTIMATE
                nbytes = len(serialize(agent.local_map, basis, cfg))
                carried = agent.local_map.m
            else:
                payload = map_increment(agent.snapshot, agent.local_map)
                role = Role.INCREMENT
                nbytes = len(encode_increment(payload))
                carried = payload.carried_count
            if bandwidth_cap is not None and nbytes > bandwidth_cap:
                record.skipped.append(agent.agent_id)
                record.skipped_bytes[agent.agent_id] = nbytes
                continue
            sent.append((idx, payload, role))
            agent.bytes_sent += nbytes
            record.participants.append(agent.agent_id)
            record.kinds[agent.agent_id] = role.value
            record.bytes_by_agent[agent.agent_id] = nbytes
            record.carried_by_agent[agent.agent_id] = carried

        if len(agents) == 1:
            new_global = agents[0].local_map if sent else (prev_global or new_map(basis, cfg))
        elif sent:
            contribs: list[tuple[WeightPosterior | MapIncrement, Role]] = []
            if prev_global is not None:
                contribs.append((prev_global, Role.FULL_ESTIMATE))
            contribs.extend((payload, role) for _, payload, role in sent)
            new_global = fuse_maps(contribs, cfg.prior_mean, cfg.prior_variance, policy)
        else:
            new_global = prev_global or new_map(basis, cfg)

        for idx, _, _ in sent:
            agents[idx].local_map = new_global
            agents[idx].snapshot = new_global

        prev_global = new_global
        per_round.append(new_global)
        record.global_checksum = map_checksum(new_global)
        if on_round is not None:
            on_round(record, new_global)

    return per_round
