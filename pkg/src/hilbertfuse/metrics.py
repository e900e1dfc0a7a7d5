"""Evaluation metrics: exact rank-based AUC-ROC, thresholded precision and
recall, and byte-exact model size accounting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import MetricUndefinedError
from . import gridmap, model


@dataclass
class ScoredLabels:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1 or len(self.scores) == 0:
            raise ValueError("scores and labels must be non-empty 1-D arrays of equal length")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be 0 or 1")


def auc(sl: ScoredLabels) -> float:
    """Area under the ROC curve via the rank-sum (Mann-Whitney) statistic.

    Equals the probability that a random positive outscores a random
    negative, with ties counted 1/2. Computed with an O(n log n) sort using
    midranks; defined by (and tested against) the pairwise count.
    """
    n_pos = int(np.count_nonzero(sl.labels == 1))
    n_neg = len(sl.labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricUndefinedError("AUC needs at least one positive and one negative label")

    order = np.argsort(sl.scores, kind="mergesort")
    s = sl.scores[order]
    # Midranks: equal scores share the average of their 1-based rank range.
    boundaries = np.flatnonzero(np.diff(s)) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(s)]])
    ranks = np.repeat(0.5 * (starts + 1 + ends), ends - starts)
    rank_sum_pos = ranks[sl.labels[order] == 1].sum()
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def precision_recall(sl: ScoredLabels, threshold: float = 0.5) -> tuple[float, float]:
    """Confusion-matrix precision and recall with prediction = score >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0,1), got {threshold}")
    pred = sl.scores >= threshold
    tp = int(np.count_nonzero(pred & (sl.labels == 1)))
    fp = int(np.count_nonzero(pred & (sl.labels == 0)))
    fn = int(np.count_nonzero(~pred & (sl.labels == 1)))
    if tp + fp == 0:
        raise MetricUndefinedError("precision undefined: no positive predictions at this threshold")
    if tp + fn == 0:
        raise MetricUndefinedError("recall undefined: no positive labels")
    return tp / (tp + fp), tp / (tp + fn)


def model_size_report(model_bytes: bytes, grid_variants: Mapping[str, bytes]) -> dict[str, int]:
    """Exact byte counts of serialized artifacts, validating each payload.

    Keys: "fastbhm" plus one entry per named grid variant.
    """
    model.deserialize(model_bytes)  # parse fully; rejects malformed payloads
    report = {"fastbhm": len(model_bytes)}
    for name, blob in grid_variants.items():
        gridmap.validate_grid_bytes(blob)
        report[name] = len(blob)
    return report


def metrics_table(values: Mapping[str, float | int]) -> str:
    """Aligned two-column text rendering of a metrics mapping."""
    width = max(len(k) for k in values)
    lines = []
    for k, v in values.items():
        shown = f"{v:.6f}" if isinstance(v, float) else str(v)
        lines.append(f"{k:<{width}}  {shown}")
    return "\n".join(lines)
