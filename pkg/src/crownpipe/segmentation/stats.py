"""Per-segment statistics and the pairwise fusion cost.

The cost of merging two adjacent segments is a weighted sum of the increase
in color heterogeneity (pixel-count-weighted standard deviations per layer)
and the increase in shape heterogeneity (compactness l/sqrt(n) and
smoothness l/b, where l is the perimeter in exposed pixel edges and b the
perimeter of the bounding box). A merge is admissible while the cost stays
below the squared scale parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class SegmentationError(Exception):
    pass


@dataclass(frozen=True)
class MergeParams:
    """Knobs of the region-merging engine.

    Defaults follow the tuned values used for the tree crown maps:
    scale 200, shape weight 0.2, compactness weight 0.5.
    """

    scale: float = 200.0
    shape_weight: float = 0.2
    compactness_weight: float = 0.5

    def __post_init__(self):
        if self.scale <= 0:
            raise SegmentationError(f"scale must be positive, got {self.scale}")
        if not 0.0 <= self.shape_weight < 1.0:
            raise SegmentationError(
                f"shape weight must be in [0, 1), got {self.shape_weight}")
        if not 0.0 <= self.compactness_weight <= 1.0:
            raise SegmentationError(
                f"compactness weight must be in [0, 1], got {self.compactness_weight}")


@dataclass
class SegmentStats:
    """Aggregates of one segment: pixel count, per-layer sums, perimeter, bbox.

    ``sum``/``sumsq`` have one entry per stack layer; layer values are
    integer levels, so the sums are exact regardless of accumulation order.
    ``perimeter`` counts pixel edges facing another segment, the background
    or the image border. ``bbox`` is (x, y, w, h) in pixel coordinates.
    """

    id: int
    n: int
    sum: np.ndarray
    sumsq: np.ndarray
    perimeter: int
    bbox: tuple[int, int, int, int]

    def __post_init__(self):
        self.sum = np.asarray(self.sum, dtype=np.float64)
        self.sumsq = np.asarray(self.sumsq, dtype=np.float64)
        if self.n < 1:
            raise SegmentationError(f"segment {self.id}: pixel count must be >= 1")
        if self.perimeter < 4:
            raise SegmentationError(f"segment {self.id}: perimeter must be >= 4")

    @property
    def mean(self) -> np.ndarray:
        return self.sum / self.n

    @property
    def std(self) -> np.ndarray:
        var = self.sumsq / self.n - (self.sum / self.n) ** 2
        return np.sqrt(np.maximum(var, 0.0))

    @property
    def bbox_perimeter(self) -> int:
        return 2 * (self.bbox[2] + self.bbox[3])

    def __eq__(self, other) -> bool:
        if not isinstance(other, SegmentStats):
            return NotImplemented
        return (self.id == other.id and self.n == other.n
                and self.perimeter == other.perimeter and self.bbox == other.bbox
                and np.array_equal(self.sum, other.sum)
                and np.array_equal(self.sumsq, other.sumsq))


def union_stats(a: SegmentStats, b: SegmentStats, shared_edges: int,
                merged_id: int | None = None) -> SegmentStats:
    """Exact stats of the union of two adjacent segments.

    ``shared_edges`` is the number of pixel edges on their common boundary.
    """
    if shared_edges < 1:
        raise SegmentationError("segments share no boundary")
    x = min(a.bbox[0], b.bbox[0])
    y = min(a.bbox[1], b.bbox[1])
    w = max(a.bbox[0] + a.bbox[2], b.bbox[0] + b.bbox[2]) - x
    h = max(a.bbox[1] + a.bbox[3], b.bbox[1] + b.bbox[3]) - y
    return SegmentStats(
        id=merged_id if merged_id is not None else min(a.id, b.id),
        n=a.n + b.n,
        sum=a.sum + b.sum,
        sumsq=a.sumsq + b.sumsq,
        perimeter=a.perimeter + b.perimeter - 2 * shared_edges,
        bbox=(x, y, w, h),
    )


def merge_cost(a: SegmentStats, b: SegmentStats, merged: SegmentStats,
               params: MergeParams, weights) -> float:
    """Fusion cost of replacing segments a and b with their union.

    ``merged`` must be the exact union stats (see :func:`union_stats`); the
    implied shared boundary is recovered from the perimeters and must be a
    whole, positive edge count, otherwise the pair cannot be adjacent.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if merged.n != a.n + b.n:
        raise SegmentationError("merged stats inconsistent: pixel counts do not add up")
    if not (np.array_equal(merged.sum, a.sum + b.sum)
            and np.array_equal(merged.sumsq, a.sumsq + b.sumsq)):
        raise SegmentationError("merged stats inconsistent: layer sums do not add up")
    shared2 = a.perimeter + b.perimeter - merged.perimeter
    if shared2 < 2 or shared2 % 2 != 0:
        raise SegmentationError(
            "segments are not adjacent (no shared boundary implied by perimeters)")
    x = min(a.bbox[0], b.bbox[0])
    y = min(a.bbox[1], b.bbox[1])
    w = max(a.bbox[0] + a.bbox[2], b.bbox[0] + b.bbox[2]) - x
    h = max(a.bbox[1] + a.bbox[3], b.bbox[1] + b.bbox[3]) - y
    if merged.bbox != (x, y, w, h):
        raise SegmentationError("merged stats inconsistent: bounding box is not the union")

    color = 0.0
    for k in range(len(weights)):
        color += weights[k] * (merged.n * _std1(merged, k)
                               - (a.n * _std1(a, k) + b.n * _std1(b, k)))

    d_cmpct = (merged.n * (merged.perimeter / math.sqrt(merged.n))
               - (a.n * (a.perimeter / math.sqrt(a.n))
                  + b.n * (b.perimeter / math.sqrt(b.n))))
    d_smooth = (merged.n * (merged.perimeter / merged.bbox_perimeter)
                - (a.n * (a.perimeter / a.bbox_perimeter)
                   + b.n * (b.perimeter / b.bbox_perimeter)))
    shape = (params.compactness_weight * d_cmpct
             + (1.0 - params.compactness_weight) * d_smooth)
    return (1.0 - params.shape_weight) * color + params.shape_weight * shape


def _std1(s: SegmentStats, k: int) -> float:
    var = s.sumsq[k] / s.n - (s.sum[k] / s.n) ** 2
    return math.sqrt(var) if var > 0.0 else 0.0
