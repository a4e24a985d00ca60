"""Mutual nearest neighbor search with a bidirectional ratio test, plus
the per-method sweep-threshold semantics.

A pair (i, j) is a match when j is row i's nearest neighbor in B, i is row
j's nearest neighbor in A, and the nearest/second-nearest distance ratio
is below the threshold in both directions. A query with no second neighbor
has ratio 0 (a lone descriptor is maximally unambiguous); identical
first and second distances give ratio 1. Search is exact and exhaustive.

The mutual-NN pair set does not depend on the threshold, so applying the
ratio filter before or after the mutual check accepts the same set; the
implementation computes candidates once and filters, which also lets a
sweep reuse one candidate set across all thresholds.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptySet, MetricMismatch, OutOfRange
from .features import DescriptorKind, DescriptorMatrix, FeatureSet, Metric, ScoredMatchFile, metric_for

SWEEP_MIN = 0.1
SWEEP_MAX = 1.0
_SWEEP_TOL = 1e-9
DFM_DEEP_THRESHOLDS = (0.90, 0.95)


class MethodKind(enum.Enum):
    RATIO_TEST = "ratio"
    CONFIDENCE_FILTER = "confidence"
    DFM_SCHEDULE = "dfm"


@dataclass(frozen=True)
class ThresholdAssignment:
    """Per-method meaning of one sweep value."""

    kind: MethodKind
    ratio: float | None = None
    confidence_cutoff: float | None = None
    schedule: tuple[float, ...] | None = None


@dataclass(frozen=True)
class Match:
    index_a: int
    index_b: int
    dist: float
    ratio_a: float
    ratio_b: float


@dataclass(frozen=True, eq=False)
class MatchSet:
    """One-to-one matches between two feature sets, sorted by index_a."""

    index_a: np.ndarray  # (n,) int64
    index_b: np.ndarray
    dist: np.ndarray  # (n,) float64
    ratio_a: np.ndarray
    ratio_b: np.ndarray
    threshold_used: float
    metric: Metric

    def __len__(self) -> int:
        return len(self.index_a)

    def pairs(self) -> list[tuple[int, int]]:
        return list(zip(self.index_a.tolist(), self.index_b.tolist()))

    def matches(self) -> list[Match]:
        return [
            Match(int(a), int(b), float(d), float(ra), float(rb))
            for a, b, d, ra, rb in zip(
                self.index_a, self.index_b, self.dist, self.ratio_a, self.ratio_b
            )
        ]

    def __eq__(self, other) -> bool:
        if not isinstance(other, MatchSet):
            return NotImplemented
        return (
            self.metric is other.metric
            and np.array_equal(self.index_a, other.index_a)
            and np.array_equal(self.index_b, other.index_b)
        )


def _descriptors(obj) -> DescriptorMatrix:
    return obj.descriptors if isinstance(obj, FeatureSet) else obj


def _check_metric(desc: DescriptorMatrix, metric: Metric) -> None:
    if metric is Metric.L2 and desc.kind is not DescriptorKind.FLOAT32:
        raise MetricMismatch("L2 requires float32 descriptors")
    if metric is Metric.HAMMING and desc.kind is not DescriptorKind.PACKED_BINARY:
        raise MetricMismatch("Hamming requires packed binary descriptors")


def _block_rows(n_cols: int, item_size: int) -> int:
    # Keep the per-block temporary around 32 MB.
    target = 32 * 1024 * 1024
    return max(1, target // max(1, n_cols * item_size))


def _distance_block(q: np.ndarray, s: np.ndarray, metric: Metric) -> np.ndarray:
    """Exact pairwise distances (len(q), len(s)) in float64."""
    if metric is Metric.L2:
        d = q[:, None, :].astype(np.float64) - s[None, :, :].astype(np.float64)
        return np.sqrt((d * d).sum(axis=2))
    x = np.bitwise_xor(q[:, None, :], s[None, :, :])
    return np.bitwise_count(x).sum(axis=2, dtype=np.int64).astype(np.float64)


def _nearest_two_sweep(q_data: np.ndarray, s_data: np.ndarray, metric: Metric):
    """Per query row: (nearest index, nearest dist, second dist).

    Ties take the lowest set index; a single-row set yields +inf second
    distance. Queries are processed in blocks to bound memory.
    """
    nq, ns = q_data.shape[0], s_data.shape[0]
    item = 8 * q_data.shape[1] if metric is Metric.L2 else q_data.shape[1]
    step = _block_rows(ns, item)
    nn = np.empty(nq, np.int64)
    d1 = np.empty(nq, np.float64)
    d2 = np.empty(nq, np.float64)
    for start in range(0, nq, step):
        block = _distance_block(q_data[start : start + step], s_data, metric)
        idx = block.argmin(axis=1)
        rows = np.arange(block.shape[0])
        best = block[rows, idx]
        if ns == 1:
            second = np.full(block.shape[0], np.inf)
        else:
            block[rows, idx] = np.inf
            second = block.min(axis=1)
        nn[start : start + step] = idx
        d1[start : start + step] = best
        d2[start : start + step] = second
    return nn, d1, d2


def _ratios(d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    out = np.empty_like(d1)
    no_second = np.isinf(d2)
    zero_second = (d2 == 0.0) & ~no_second
    normal = ~no_second & ~zero_second
    out[no_second] = 0.0
    out[zero_second] = 1.0
    out[normal] = d1[normal] / d2[normal]
    return out


def nearest_two(q: np.ndarray, set_desc, metric: Metric):
    """(best_index, best_dist, second_dist) of one query row against a set.

    second_dist is +inf when the set has a single row; equidistant rows
    resolve to the lowest index.
    """
    desc = _descriptors(set_desc)
    if desc.rows == 0:
        raise EmptySet("nearest-neighbor query against an empty set")
    _check_metric(desc, metric)
    q = np.asarray(q).reshape(1, -1)
    nn, d1, d2 = _nearest_two_sweep(q, desc.data, metric)
    return int(nn[0]), float(d1[0]), float(d2[0])


@dataclass(frozen=True, eq=False)
class MutualCandidates:
    """All mutual nearest-neighbor pairs with their bidirectional ratios.

    Threshold-independent: every ratio filter is a row subset of this.
    """

    index_a: np.ndarray
    index_b: np.ndarray
    dist: np.ndarray
    ratio_a: np.ndarray
    ratio_b: np.ndarray
    metric: Metric

    def __len__(self) -> int:
        return len(self.index_a)


def mutual_candidates(a, b, metric: Metric | None = None) -> MutualCandidates:
    """Mutual NN pairs between two descriptor sets, sorted by index_a."""
    da, db = _descriptors(a), _descriptors(b)
    if metric is None:
        metric = metric_for(da.kind)
    if da.kind is not db.kind or da.dim != db.dim:
        raise MetricMismatch("descriptor sets differ in kind or dimension")
    _check_metric(da, metric)
    if da.rows == 0 or db.rows == 0:
        e = np.empty(0, np.int64)
        f = np.empty(0, np.float64)
        return MutualCandidates(e, e.copy(), f, f.copy(), f.copy(), metric)
    nn_ab, d1_ab, d2_ab = _nearest_two_sweep(da.data, db.data, metric)
    nn_ba, d1_ba, d2_ba = _nearest_two_sweep(db.data, da.data, metric)
    ia = np.arange(da.rows, dtype=np.int64)
    mutual = nn_ba[nn_ab] == ia
    ia = ia[mutual]
    ib = nn_ab[mutual]
    return MutualCandidates(
        ia,
        ib,
        d1_ab[mutual],
        _ratios(d1_ab, d2_ab)[mutual],
        _ratios(d1_ba, d2_ba)[ib],
        metric,
    )


def match_mnns_brt(
    a,
    b,
    r: float,
    metric: Metric | None = None,
    bidirectional: bool = True,
) -> MatchSet:
    """Mutual nearest neighbor matching with the ratio test.

    With ``bidirectional`` (the default) the ratio condition must hold in
    both search directions; the one-directional variant only constrains
    the A-to-B ratio and exists for sensitivity studies. An empty side
    gives an empty MatchSet, not an error.
    """
    if not 0.0 < r <= 1.0:
        raise OutOfRange(f"ratio threshold must lie in (0, 1], got {r}")
    cand = mutual_candidates(a, b, metric)
    sel = cand.ratio_a <= r
    if bidirectional:
        sel &= cand.ratio_b <= r
    return MatchSet(
        cand.index_a[sel],
        cand.index_b[sel],
        cand.dist[sel],
        cand.ratio_a[sel],
        cand.ratio_b[sel],
        threshold_used=r,
        metric=cand.metric,
    )


# ---------------------------------------------------------------------------
# Sweep-threshold semantics


def _check_sweep_value(t: float) -> float:
    if not (SWEEP_MIN - _SWEEP_TOL <= t <= SWEEP_MAX + _SWEEP_TOL):
        raise OutOfRange(f"sweep value must lie in [0.1, 1.0], got {t}")
    return min(max(float(t), SWEEP_MIN), SWEEP_MAX)


def _ceil_2dp(x: float) -> float:
    return math.ceil(x * 100.0 - 1e-9) / 100.0


def effective_thresholds(kind: MethodKind, t: float) -> ThresholdAssignment:
    """Translate a sweep value into the per-method tuning parameter.

    Ratio-test methods use t directly; confidence-filter methods keep
    entries with confidence >= 1 - t; the layered schedule uses the cube
    root of t (rounded up at 2 decimals, matching the published schedule)
    for its first three layers and fixed 0.90 / 0.95 for the deepest two.
    """
    t = _check_sweep_value(t)
    if kind is MethodKind.RATIO_TEST:
        return ThresholdAssignment(kind, ratio=t)
    if kind is MethodKind.CONFIDENCE_FILTER:
        return ThresholdAssignment(kind, confidence_cutoff=round(1.0 - t, 10))
    shallow = _ceil_2dp(t ** (1.0 / 3.0))
    return ThresholdAssignment(
        kind, schedule=(shallow, shallow, shallow) + DFM_DEEP_THRESHOLDS
    )


def filter_scored_matches(m: ScoredMatchFile, t: float) -> np.ndarray:
    """Entries of a scored-match file passing the confidence cutoff 1 - t.

    Returns (k, 4) float64 coordinate correspondences, original order.
    """
    t = _check_sweep_value(t)
    if len(m) == 0:
        return np.empty((0, 4), np.float64)
    # Compare in float32, the storage precision, so that round cutoff
    # values (0.9, 0.5, ...) behave as written in fixtures.
    cutoff = np.float32(1.0 - t)
    keep = m.entries[:, 4] >= cutoff
    return m.entries[keep, :4].astype(np.float64)
