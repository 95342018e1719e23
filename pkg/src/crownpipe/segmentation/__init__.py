"""Bottom-up multiresolution region merging over a weighted layer stack."""

from .stats import MergeParams, SegmentStats, merge_cost, union_stats, SegmentationError
from .segmap import (
    SegmentMap,
    build_segment_map,
    export_segment_records,
    import_segment_map,
    manual_merge,
    write_label_raster,
)
from .engine import segment

__all__ = [
    "MergeParams",
    "SegmentStats",
    "SegmentMap",
    "SegmentationError",
    "merge_cost",
    "union_stats",
    "segment",
    "manual_merge",
    "build_segment_map",
    "export_segment_records",
    "import_segment_map",
    "write_label_raster",
]
