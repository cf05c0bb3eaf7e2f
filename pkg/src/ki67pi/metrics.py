"""Detection scoring and proliferation-index statistics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

DEFAULT_MATCH_RADIUS = 6.0
PI_BINS = ((0.0, 25.0), (25.0, 75.0), (75.0, 100.0))


class UndefinedPIError(ZeroDivisionError):
    """Raised when no cells were counted, so the index has no value."""


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn: int
    pairs: list[tuple[int, int]] = field(default_factory=list)
    cost: float = 0.0


@dataclass
class PIRecord:
    image_id: str
    n_pos: int
    n_neg: int
    pi: float | None = None

    def __post_init__(self):
        if self.pi is None and self.n_pos + self.n_neg > 0:
            self.pi = proliferation_index(self.n_pos, self.n_neg)


class PIDifferenceStats(NamedTuple):
    mean_abs_diff: float
    std_abs_diff: float
    cov: float
    perfect_agreement: bool


def match_centroids(dets, gts, match_radius: float = DEFAULT_MATCH_RADIUS) -> MatchResult:
    """One-to-one matching of detections to ground truth within ``match_radius``.

    Among all matchings restricted to pairs within the radius, picks one with
    the most pairs and, among those, the least total Euclidean distance.
    """
    if not match_radius > 0:
        raise ValueError(f"match_radius must be positive, got {match_radius}")
    dets = np.asarray(dets, dtype=float).reshape(-1, 2)
    gts = np.asarray(gts, dtype=float).reshape(-1, 2)
    n, m = len(dets), len(gts)
    if n == 0 or m == 0:
        return MatchResult(0, n, m)
    dist = cdist(dets, gts)
    allowed = dist <= match_radius
    # any forbidden pair costs more than a full set of allowed ones, so the
    # solver first maximizes the allowed count, then minimizes distance
    penalty = match_radius * (min(n, m) + 1) + 1.0
    cost = np.where(allowed, dist, penalty)
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if allowed[r, c]]
    tp = len(pairs)
    total = float(sum(dist[r, c] for r, c in pairs))
    return MatchResult(tp, n - tp, m - tp, pairs, total)


def f1_score(m: MatchResult | None = None, *, tp=None, fp=None, fn=None) -> float:
    """2 TP / (2 TP + FP + FN); an empty image with no detections scores 1.0."""
    if m is not None:
        tp, fp, fn = m.tp, m.fp, m.fn
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0
    return 2 * tp / denom


def proliferation_index(n_pos: int, n_neg: int) -> float:
    if n_pos < 0 or n_neg < 0:
        raise ValueError("cell counts must be non-negative")
    total = n_pos + n_neg
    if total == 0:
        raise UndefinedPIError("proliferation index undefined: no cells counted")
    return n_pos / total


def pi_range_accuracy(records, ranges) -> float:
    """Fraction of records whose PI (as a percentage) lies inside its closed range."""
    records, ranges = list(records), list(ranges)
    if len(records) != len(ranges):
        raise ValueError(f"{len(records)} records but {len(ranges)} ranges")
    if not records:
        raise ValueError("no records to score")
    hits = 0
    for rec, (lo, hi) in zip(records, ranges):
        pi = rec.pi if isinstance(rec, PIRecord) else rec
        if pi is not None and lo <= pi * 100.0 <= hi:
            hits += 1
    return hits / len(records)


def pi_difference_stats(pred_pi, gt_pi) -> PIDifferenceStats:
    """Mean, population std and their ratio for |pred - gt| in percentage points.

    Inputs are per-patient indices in [0, 1], already averaged over that
    patient's images. Perfect agreement reports cov = 0 with the flag set.
    """
    pred = np.asarray(pred_pi, dtype=float)
    gt = np.asarray(gt_pi, dtype=float)
    if pred.shape != gt.shape or pred.ndim != 1:
        raise ValueError("pred and gt must be 1-D sequences of equal length")
    if pred.size == 0:
        raise ValueError("need at least one patient")
    d = np.abs(pred - gt) * 100.0
    mean = float(d.mean())
    std = float(d.std())
    if mean == 0.0:
        return PIDifferenceStats(0.0, std, 0.0, True)
    return PIDifferenceStats(mean, std, std / mean, False)


def per_patient_mean(records, patient_of) -> dict[str, float]:
    """Average defined PIs over the images of each patient. ``patient_of`` maps image_id to patient."""
    groups: dict[str, list[float]] = {}
    for rec in records:
        if rec.pi is not None:
            groups.setdefault(patient_of(rec.image_id), []).append(rec.pi)
    return {p: float(np.mean(v)) for p, v in sorted(groups.items())}
