"""Segment maps: the per-pixel id raster plus derived stats and adjacency."""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass

import numpy as np

from ..grids import Band, Grid, LayerStack, load_ascii_grid, write_ascii_grid
from .stats import SegmentStats, SegmentationError


@dataclass
class SegmentMap:
    """Labeling of every pixel with a segment id (0 = background).

    ``adjacency`` maps each id to its 4-connected neighbors and the length
    of the shared boundary in pixel edges. Instances are treated as
    immutable; mutating operations return a new map.
    """

    grid: Grid
    labels: np.ndarray  # (H, W) int32
    stats: dict[int, SegmentStats]
    adjacency: dict[int, dict[int, int]]

    def ids(self) -> list[int]:
        return sorted(self.stats)

    @property
    def segment_count(self) -> int:
        return len(self.stats)

    def neighbors(self, seg_id: int) -> dict[int, int]:
        return self.adjacency.get(seg_id, {})

    def require(self, seg_id: int) -> SegmentStats:
        try:
            return self.stats[seg_id]
        except KeyError:
            raise SegmentationError(f"unknown segment id {seg_id}") from None


def build_segment_map(stack: LayerStack, labels: np.ndarray) -> SegmentMap:
    """Derive stats and adjacency from a label raster, scanning row-major."""
    labels = np.asarray(labels)
    if labels.shape != (stack.grid.height, stack.grid.width):
        raise SegmentationError("label raster does not match the stack grid")
    flat = labels.ravel().astype(np.int64)
    top = int(flat.max(initial=0))
    if top == 0:
        raise SegmentationError("label raster has no segments")

    counts = np.bincount(flat, minlength=top + 1)
    nlayers = stack.layers.shape[0]
    sums = np.zeros((top + 1, nlayers))
    sumsqs = np.zeros((top + 1, nlayers))
    for k in range(nlayers):
        lk = stack.layers[k].ravel()
        sums[:, k] = np.bincount(flat, weights=lk, minlength=top + 1)
        sumsqs[:, k] = np.bincount(flat, weights=lk * lk, minlength=top + 1)

    same = np.zeros(top + 1, dtype=np.int64)
    h_pair = (labels[:, :-1] == labels[:, 1:]) & (labels[:, :-1] > 0)
    v_pair = (labels[:-1, :] == labels[1:, :]) & (labels[:-1, :] > 0)
    same += np.bincount(labels[:, :-1][h_pair].ravel().astype(np.int64), minlength=top + 1)
    same += np.bincount(labels[:-1, :][v_pair].ravel().astype(np.int64), minlength=top + 1)
    perim = 4 * counts - 2 * same

    rows, cols = np.nonzero(labels > 0)
    ids_px = labels[rows, cols].astype(np.int64)
    bx0 = np.full(top + 1, np.iinfo(np.int64).max)
    by0 = np.full(top + 1, np.iinfo(np.int64).max)
    bx1 = np.full(top + 1, -1, dtype=np.int64)
    by1 = np.full(top + 1, -1, dtype=np.int64)
    np.minimum.at(bx0, ids_px, cols)
    np.minimum.at(by0, ids_px, rows)
    np.maximum.at(bx1, ids_px, cols)
    np.maximum.at(by1, ids_px, rows)

    stats: dict[int, SegmentStats] = {}
    for sid in np.nonzero(counts)[0]:
        if sid == 0:
            continue
        sid = int(sid)
        stats[sid] = SegmentStats(
            id=sid, n=int(counts[sid]), sum=sums[sid].copy(), sumsq=sumsqs[sid].copy(),
            perimeter=int(perim[sid]),
            bbox=(int(bx0[sid]), int(by0[sid]),
                  int(bx1[sid] - bx0[sid] + 1), int(by1[sid] - by0[sid] + 1)),
        )

    adjacency: dict[int, dict[int, int]] = {sid: {} for sid in stats}
    for a, b in ((labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :])):
        diff = (a != b) & (a > 0) & (b > 0)
        if not diff.any():
            continue
        pa = a[diff].astype(np.int64)
        pb = b[diff].astype(np.int64)
        lo = np.minimum(pa, pb)
        hi = np.maximum(pa, pb)
        pairs, lens = np.unique(lo * (top + 1) + hi, return_counts=True)
        for key, ln in zip(pairs, lens):
            i, j = int(key // (top + 1)), int(key % (top + 1))
            adjacency[i][j] = adjacency[i].get(j, 0) + int(ln)
            adjacency[j][i] = adjacency[j].get(i, 0) + int(ln)

    return SegmentMap(grid=stack.grid, labels=labels.astype(np.int32),
                      stats=stats, adjacency=adjacency)


def manual_merge(seg_map: SegmentMap, ids) -> SegmentMap:
    """Merge a connected set of segments into one (the lowest id survives)."""
    ids = sorted(set(int(i) for i in ids))
    if not ids:
        raise SegmentationError("no segment ids given")
    for sid in ids:
        seg_map.require(sid)
    if len(ids) == 1:
        return seg_map

    # the induced adjacency subgraph must be connected
    idset = set(ids)
    seen = {ids[0]}
    queue = deque([ids[0]])
    while queue:
        cur = queue.popleft()
        for nb in seg_map.adjacency.get(cur, {}):
            if nb in idset and nb not in seen:
                seen.add(nb)
                queue.append(nb)
    if seen != idset:
        raise SegmentationError(
            f"segments {sorted(idset - seen)} are not adjacent to the rest of the merge set")

    keep = ids[0]
    gone = ids[1:]

    labels = seg_map.labels.copy()
    labels[np.isin(labels, gone)] = keep

    stats = dict(seg_map.stats)
    adjacency = {sid: dict(nbrs) for sid, nbrs in seg_map.adjacency.items()}

    internal = 0
    for sid in ids:
        internal += sum(ln for nb, ln in seg_map.adjacency[sid].items() if nb in idset)
    internal //= 2  # each internal boundary counted from both sides
    n = sum(stats[sid].n for sid in ids)
    total_sum = np.sum([stats[sid].sum for sid in ids], axis=0)
    total_sumsq = np.sum([stats[sid].sumsq for sid in ids], axis=0)
    perimeter = sum(stats[sid].perimeter for sid in ids) - 2 * internal
    x0 = min(stats[sid].bbox[0] for sid in ids)
    y0 = min(stats[sid].bbox[1] for sid in ids)
    x1 = max(stats[sid].bbox[0] + stats[sid].bbox[2] for sid in ids)
    y1 = max(stats[sid].bbox[1] + stats[sid].bbox[3] for sid in ids)
    merged = SegmentStats(id=keep, n=n, sum=total_sum, sumsq=total_sumsq,
                          perimeter=perimeter, bbox=(x0, y0, x1 - x0, y1 - y0))

    new_nbrs: dict[int, int] = {}
    for sid in ids:
        for nb, ln in adjacency[sid].items():
            if nb in idset:
                continue
            new_nbrs[nb] = new_nbrs.get(nb, 0) + ln
    for sid in gone:
        del stats[sid]
        del adjacency[sid]
    stats[keep] = merged
    adjacency[keep] = new_nbrs
    for nb, ln in new_nbrs.items():
        for sid in gone:
            adjacency[nb].pop(sid, None)
        adjacency[nb][keep] = ln

    return SegmentMap(grid=seg_map.grid, labels=labels, stats=stats, adjacency=adjacency)


# ---------------------------------------------------------------------------
# Export / import

RECORD_FIELDS = ("id", "n", "perimeter", "bbox_x", "bbox_y", "bbox_w", "bbox_h")


def export_segment_records(seg_map: SegmentMap, path, layer_names) -> None:
    """Write per-segment records as CSV: id, size, perimeter, bbox, mu/sigma."""
    header = list(RECORD_FIELDS)
    header += [f"mu_{name}" for name in layer_names]
    header += [f"sigma_{name}" for name in layer_names]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for sid in seg_map.ids():
            s = seg_map.stats[sid]
            row = [s.id, s.n, s.perimeter, *s.bbox]
            row += [repr(v) for v in s.mean]
            row += [repr(v) for v in s.std]
            writer.writerow(row)


def write_label_raster(seg_map: SegmentMap, path) -> None:
    band = Band(seg_map.grid, seg_map.labels.astype(np.float64))
    write_ascii_grid(path, band, nodata=-1, fmt="%d")


def import_segment_map(stack: LayerStack, raster_path) -> SegmentMap:
    """Rebuild a SegmentMap from an exported label raster and its stack."""
    band = load_ascii_grid(raster_path)
    if band.grid != stack.grid:
        raise SegmentationError("label raster grid does not match the stack")
    return build_segment_map(stack, band.values.astype(np.int32))
