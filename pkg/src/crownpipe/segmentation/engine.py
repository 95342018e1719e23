"""Sequential mutual-best-fit region merging.

Every foreground pixel starts as its own segment. The engine sweeps the
current segments in row-major order of their seed pixels; each segment finds
the neighbor with the lowest fusion cost (ties to the lower id), and the
pair merges only if the choice is mutual and the cost is below scale^2.
Sweeps repeat until a full pass makes no merge. The schedule is strictly
sequential and therefore bitwise reproducible.

The hot loop is numba-compiled; adjacency lives in one typed dict per
segment mapping neighbor id -> shared boundary length in pixel edges.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, types
from numba.typed import Dict, List

from ..grids import LayerStack
from .segmap import SegmentMap, build_segment_map
from .stats import MergeParams, SegmentationError

_I64 = types.int64


@njit(cache=True)
def _pair_cost(s, t, n, sums, sumsqs, perim, bx0, by0, bx1, by1,
               shared, weights, w_shape, w_cmpct):
    na = n[s]
    nb = n[t]
    nm = na + nb
    color = 0.0
    for k in range(weights.shape[0]):
        var_a = sumsqs[s, k] / na - (sums[s, k] / na) ** 2
        std_a = math.sqrt(var_a) if var_a > 0.0 else 0.0
        var_b = sumsqs[t, k] / nb - (sums[t, k] / nb) ** 2
        std_b = math.sqrt(var_b) if var_b > 0.0 else 0.0
        sm = sums[s, k] + sums[t, k]
        qm = sumsqs[s, k] + sumsqs[t, k]
        var_m = qm / nm - (sm / nm) ** 2
        std_m = math.sqrt(var_m) if var_m > 0.0 else 0.0
        color += weights[k] * (nm * std_m - (na * std_a + nb * std_b))

    la = perim[s]
    lb = perim[t]
    lm = la + lb - 2 * shared
    ux0 = min(bx0[s], bx0[t])
    uy0 = min(by0[s], by0[t])
    ux1 = max(bx1[s], bx1[t])
    uy1 = max(by1[s], by1[t])
    bb_m = 2 * ((ux1 - ux0 + 1) + (uy1 - uy0 + 1))
    bb_a = 2 * ((bx1[s] - bx0[s] + 1) + (by1[s] - by0[s] + 1))
    bb_b = 2 * ((bx1[t] - bx0[t] + 1) + (by1[t] - by0[t] + 1))
    d_cmpct = (nm * (lm / math.sqrt(nm))
               - (na * (la / math.sqrt(na)) + nb * (lb / math.sqrt(nb))))
    d_smooth = (nm * (lm / bb_m) - (na * (la / bb_a) + nb * (lb / bb_b)))
    shape = w_cmpct * d_cmpct + (1.0 - w_cmpct) * d_smooth
    return (1.0 - w_shape) * color + w_shape * shape


@njit(cache=True)
def _best_neighbor(s, adj, n, sums, sumsqs, perim, bx0, by0, bx1, by1,
                   weights, w_shape, w_cmpct):
    best_t = -1
    best_f = np.inf
    for t, shared in adj[s].items():
        f = _pair_cost(s, t, n, sums, sumsqs, perim, bx0, by0, bx1, by1,
                       shared, weights, w_shape, w_cmpct)
        if f < best_f or (f == best_f and t < best_t):
            best_f = f
            best_t = t
    return best_t, best_f


@njit(cache=True)
def _build_state(labels0, layers):
    h, w = labels0.shape
    nlayers = layers.shape[0]
    n0 = 0
    for r in range(h):
        for c in range(w):
            if labels0[r, c] > n0:
                n0 = labels0[r, c]

    n = np.zeros(n0 + 1, dtype=np.int64)
    sums = np.zeros((n0 + 1, nlayers), dtype=np.float64)
    sumsqs = np.zeros((n0 + 1, nlayers), dtype=np.float64)
    perim = np.zeros(n0 + 1, dtype=np.int64)
    bx0 = np.zeros(n0 + 1, dtype=np.int64)
    by0 = np.zeros(n0 + 1, dtype=np.int64)
    bx1 = np.zeros(n0 + 1, dtype=np.int64)
    by1 = np.zeros(n0 + 1, dtype=np.int64)

    adj = List()
    for _ in range(n0 + 1):
        adj.append(Dict.empty(_I64, _I64))

    for r in range(h):
        for c in range(w):
            s = labels0[r, c]
            if s == 0:
                continue
            n[s] = 1
            for k in range(nlayers):
                v = layers[k, r, c]
                sums[s, k] = v
                sumsqs[s, k] = v * v
            perim[s] = 4
            bx0[s] = c
            bx1[s] = c
            by0[s] = r
            by1[s] = r
            if c + 1 < w and labels0[r, c + 1] > 0:
                t = labels0[r, c + 1]
                adj[s][t] = 1
                adj[t][s] = 1
            if r + 1 < h and labels0[r + 1, c] > 0:
                t = labels0[r + 1, c]
                adj[s][t] = 1
                adj[t][s] = 1
    return n0, n, sums, sumsqs, perim, bx0, by0, bx1, by1, adj


@njit(cache=True)
def _run_merges(n0, n, sums, sumsqs, perim, bx0, by0, bx1, by1, adj,
                weights, w_shape, w_cmpct, scale2):
    nlayers = sums.shape[1]
    parent = np.arange(n0 + 1, dtype=np.int64)
    alive = np.ones(n0 + 1, dtype=np.bool_)
    alive[0] = False
    merges = 0

    changed = True
    while changed:
        changed = False
        for s in range(1, n0 + 1):
            if not alive[s]:
                continue
            t, f_st = _best_neighbor(s, adj, n, sums, sumsqs, perim,
                                     bx0, by0, bx1, by1, weights, w_shape, w_cmpct)
            if t < 0 or not (f_st < scale2):
                continue
            u, _ = _best_neighbor(t, adj, n, sums, sumsqs, perim,
                                  bx0, by0, bx1, by1, weights, w_shape, w_cmpct)
            if u != s:
                continue

            keep = s if s < t else t
            gone = t if s < t else s
            shared = adj[keep][gone]

            for k in range(nlayers):
                sums[keep, k] += sums[gone, k]
                sumsqs[keep, k] += sumsqs[gone, k]
            n[keep] += n[gone]
            perim[keep] = perim[keep] + perim[gone] - 2 * shared
            bx0[keep] = min(bx0[keep], bx0[gone])
            by0[keep] = min(by0[keep], by0[gone])
            bx1[keep] = max(bx1[keep], bx1[gone])
            by1[keep] = max(by1[keep], by1[gone])

            for u2, luo in adj[gone].items():
                if u2 == keep:
                    continue
                del adj[u2][gone]
                if u2 in adj[keep]:
                    total = adj[keep][u2] + luo
                    adj[keep][u2] = total
                    adj[u2][keep] = total
                else:
                    adj[keep][u2] = luo
                    adj[u2][keep] = luo
            del adj[keep][gone]
            adj[gone] = Dict.empty(_I64, _I64)

            parent[gone] = keep
            alive[gone] = False
            merges += 1
            changed = True
    return parent, alive, merges


@njit(cache=True)
def _resolve_roots(parent):
    out = np.empty_like(parent)
    for i in range(parent.shape[0]):
        root = i
        while parent[root] != root:
            root = parent[root]
        out[i] = root
    return out


def initial_labels(foreground: np.ndarray) -> np.ndarray:
    """Number foreground pixels 1..N in row-major order (0 = background)."""
    labels = np.zeros(foreground.shape, dtype=np.int64)
    labels[foreground] = np.arange(1, int(foreground.sum()) + 1, dtype=np.int64)
    return labels


def _relabel_scan_order(labels: np.ndarray) -> np.ndarray:
    """Renumber segments 1..K by order of first appearance in row-major scan."""
    flat = labels.ravel()
    uniq, first = np.unique(flat, return_index=True)
    keep = uniq != 0
    uniq, first = uniq[keep], first[keep]
    order = np.argsort(first, kind="stable")
    lut = np.zeros(int(flat.max()) + 1, dtype=np.int64)
    lut[uniq[order]] = np.arange(1, len(uniq) + 1, dtype=np.int64)
    return lut[labels]


def _run_engine(stack: LayerStack, params: MergeParams):
    foreground = stack.foreground
    if not foreground.any():
        raise SegmentationError("no foreground pixels to segment")
    labels0 = initial_labels(foreground)
    state = _build_state(labels0, stack.layers)
    n0, n, sums, sumsqs, perim, bx0, by0, bx1, by1, adj = state
    parent, alive, merges = _run_merges(
        n0, n, sums, sumsqs, perim, bx0, by0, bx1, by1, adj,
        np.ascontiguousarray(stack.weights, dtype=np.float64),
        float(params.shape_weight), float(params.compactness_weight),
        float(params.scale) ** 2,
    )
    roots = _resolve_roots(parent)
    merged_labels = roots[labels0]
    return {
        "labels0": labels0,
        "merged_labels": merged_labels,
        "merges": int(merges),
        "alive": alive,
        "n": n, "sums": sums, "sumsqs": sumsqs, "perim": perim,
        "bbox": (bx0, by0, bx1, by1),
    }


def segment(stack: LayerStack, params: MergeParams | None = None) -> SegmentMap:
    """Partition the stack's foreground into segments by region merging."""
    if params is None:
        params = MergeParams()
    raw = _run_engine(stack, params)
    labels = _relabel_scan_order(raw["merged_labels"]).astype(np.int32)
    return build_segment_map(stack, labels)
