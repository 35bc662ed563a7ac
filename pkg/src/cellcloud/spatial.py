"""Exact geometric queries over 2-D typed point sets.

Everything here is exact: all comparisons happen on squared distances
computed as ``dx*dx + dy*dy`` in float64, and the optimized paths evaluate
that same expression per candidate pair, so they agree bit-for-bit with the
O(N^2) reference twins shipped alongside them (``*_brute``).

The workhorse is a uniform grid index. With ``bin_size`` equal to the
largest query radius, a radius query only ever touches the 3x3 ring of
bins around the query cell, giving O(N) expected cost for the million-cell
neighbor-count pass that dominates the pipeline.
"""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

from .core import CellCloud, N_TYPES, TooFewCells

__all__ = [
    "SpatialIndex",
    "NeighborCounts",
    "build_index",
    "count_in_radii",
    "count_in_radii_brute",
    "mean_nn_distance",
    "mean_nn_distance_brute",
    "fps",
    "fps_brute",
    "knn_group",
    "knn_group_brute",
    "read_counts",
    "write_counts",
]

_CCNC_MAGIC = b"CCNC"
_CCNC_VERSION = 1

# Queries are chunked: keeps peak memory bounded and gives the thread pool
# units of work whose results land in disjoint output slices.
_QUERY_CHUNK = 65536


@dataclass(frozen=True)
class NeighborCounts:
    """Cumulative per-type neighbor counts at each radius.

    ``counts[i, j, t]`` is the number of type-``t`` cells within distance
    ``radii[j]`` (inclusive) of cell ``i``, never counting ``i`` itself.
    """

    radii: np.ndarray
    counts: np.ndarray

    def __post_init__(self) -> None:
        radii = np.ascontiguousarray(self.radii, dtype=np.float64)
        counts = np.ascontiguousarray(self.counts, dtype=np.uint32)
        if radii.ndim != 1 or radii.size == 0:
            raise ValueError("radii must be a non-empty 1-D array")
        if np.any(~(np.diff(radii) > 0)) or radii[0] <= 0:
            raise ValueError("radii must be strictly ascending and positive")
        if counts.ndim != 3 or counts.shape[1] != radii.size or counts.shape[2] != N_TYPES:
            raise ValueError(f"counts must have shape (n, {radii.size}, {N_TYPES})")
        radii.setflags(write=False)
        counts.setflags(write=False)
        object.__setattr__(self, "radii", radii)
        object.__setattr__(self, "counts", counts)

    @property
    def n_cells(self) -> int:
        return self.counts.shape[0]

    @property
    def n_radii(self) -> int:
        return self.radii.size


def write_counts(path: Union[str, Path], nc: NeighborCounts) -> None:
    with open(path, "wb") as fh:
        fh.write(_CCNC_MAGIC)
        fh.write(struct.pack("<I", _CCNC_VERSION))
        fh.write(struct.pack("<Q", nc.n_cells))
        fh.write(struct.pack("<B", nc.n_radii))
        fh.write(struct.pack("<B", N_TYPES))
        fh.write(nc.radii.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(nc.counts, dtype="<u4").tobytes())


def read_counts(path: Union[str, Path]) -> NeighborCounts:
    raw = Path(path).read_bytes()
    if len(raw) < 18 or raw[:4] != _CCNC_MAGIC:
        raise ValueError(f"{path}: not a CCNC cache")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != _CCNC_VERSION:
        raise ValueError(f"{path}: unsupported CCNC version {version}")
    (n_cells,) = struct.unpack_from("<Q", raw, 8)
    n_d, n_t = struct.unpack_from("<BB", raw, 16)
    if n_t != N_TYPES:
        raise ValueError(f"{path}: type count {n_t} unsupported")
    off = 18
    radii = np.frombuffer(raw, dtype="<f8", count=n_d, offset=off).copy()
    off += 8 * n_d
    counts = np.frombuffer(raw, dtype="<u4", count=n_cells * n_d * n_t, offset=off)
    return NeighborCounts(radii=radii, counts=counts.reshape(n_cells, n_d, n_t).copy())


@dataclass(frozen=True)
class SpatialIndex:
    """Uniform grid over a cloud; bin of cell i is (floor(y/b), floor(x/b)).

    Internally the cells are held in CSR-style arrays (``order`` grouped by
    bin with ``starts`` offsets over the sorted, de-duplicated ``bin_ids``),
    which is what the vectorised queries consume. The ``bins`` mapping view
    is materialised on demand.
    """

    source: CellCloud
    bin_size: float
    bin_rows: np.ndarray = field(repr=False)
    bin_cols: np.ndarray = field(repr=False)
    bin_ids: np.ndarray = field(repr=False)  # sorted unique packed ids
    starts: np.ndarray = field(repr=False)
    order: np.ndarray = field(repr=False)  # cell indices grouped by bin
    _row_span: tuple[int, int] = field(repr=False)
    _col_span: tuple[int, int] = field(repr=False)

    @property
    def bins(self) -> dict[tuple[int, int], list[int]]:
        """Mapping (bin row, bin col) -> cell index list (for inspection)."""
        out: dict[tuple[int, int], list[int]] = {}
        n_cols = self._col_span[1] - self._col_span[0] + 1
        for b in range(self.bin_ids.size):
            packed = int(self.bin_ids[b])
            r = packed // n_cols + self._row_span[0]
            c = packed % n_cols + self._col_span[0]
            out[(r, c)] = self.order[self.starts[b] : self.starts[b + 1]].tolist()
        return out


def build_index(cloud: CellCloud, bin_size: float) -> SpatialIndex:
    """Assign every cell to its grid bin and group cell indices by bin."""
    if bin_size <= 0:
        raise ValueError("bin_size must be positive")
    n = cloud.n_total
    rows = np.floor(cloud.xy[:, 1] / bin_size).astype(np.int64)
    cols = np.floor(cloud.xy[:, 0] / bin_size).astype(np.int64)
    if n:
        r0, r1 = int(rows.min()), int(rows.max())
        c0, c1 = int(cols.min()), int(cols.max())
    else:
        r0 = r1 = c0 = c1 = 0
    n_cols = c1 - c0 + 1
    packed = (rows - r0) * n_cols + (cols - c0)
    order = np.argsort(packed, kind="stable")
    sorted_ids = packed[order]
    if n:
        uniq_mask = np.empty(n, dtype=bool)
        uniq_mask[0] = True
        uniq_mask[1:] = sorted_ids[1:] != sorted_ids[:-1]
        bin_ids = sorted_ids[uniq_mask]
        starts = np.flatnonzero(uniq_mask)
        starts = np.append(starts, n).astype(np.int64)
    else:
        bin_ids = np.empty(0, dtype=np.int64)
        starts = np.zeros(1, dtype=np.int64)
    return SpatialIndex(
        source=cloud,
        bin_size=float(bin_size),
        bin_rows=rows,
        bin_cols=cols,
        bin_ids=bin_ids,
        starts=starts,
        order=order.astype(np.int64),
        _row_span=(r0, r1),
        _col_span=(c0, c1),
    )


def _count_chunk(
    index: SpatialIndex,
    q_idx: np.ndarray,
    r2: np.ndarray,
    out: np.ndarray,
) -> None:
    """Fill ``out`` (len(q_idx), Nd, T) with cumulative counts for a query chunk."""
    cloud = index.source
    xy = cloud.xy
    types = cloud.types
    n_d = r2.size
    r0, _ = index._row_span
    c0, c1 = index._col_span
    n_cols = c1 - c0 + 1
    ring = int(np.ceil(np.sqrt(r2[-1]) / index.bin_size))
    qx = xy[q_idx, 0]
    qy = xy[q_idx, 1]
    qrow = index.bin_rows[q_idx]
    qcol = index.bin_cols[q_idx]
    m = q_idx.size
    shell_counts = np.zeros(m * n_d * N_TYPES, dtype=np.int64)

    for dr in range(-ring, ring + 1):
        for dc in range(-ring, ring + 1):
            packed = (qrow + dr - r0) * n_cols + (qcol + dc - c0)
            # map each query's neighbor bin onto the CSR table
            pos = np.searchsorted(index.bin_ids, packed)
            pos_c = np.minimum(pos, index.bin_ids.size - 1)
            hit = (index.bin_ids.size > 0) & (index.bin_ids[pos_c] == packed)
            # out-of-span bins pack to ids that simply miss the table
            valid_col = (qcol + dc >= c0) & (qcol + dc <= c1)
            hit &= valid_col
            if not hit.any():
                continue
            qh = np.flatnonzero(hit)
            b = pos_c[qh]
            seg_start = index.starts[b]
            seg_len = index.starts[b + 1] - seg_start
            total = int(seg_len.sum())
            if total == 0:
                continue
            # ragged expansion: for each hit query, the run of candidate slots
            ends = np.cumsum(seg_len)
            begins = ends - seg_len
            slot = np.arange(total, dtype=np.int64)
            owner = np.searchsorted(ends, slot, side="right")
            cand = index.order[slot - begins[owner] + seg_start[owner]]
            qg = qh[owner]
            dx = qx[qg] - xy[cand, 0]
            dy = qy[qg] - xy[cand, 1]
            d2 = dx * dx + dy * dy
            shell = np.searchsorted(r2, d2, side="left")
            inside = shell < n_d
            if not inside.any():
                continue
            key = (qg[inside] * n_d + shell[inside]) * N_TYPES + types[cand[inside]]
            shell_counts += np.bincount(key, minlength=shell_counts.size)

    cum = np.cumsum(shell_counts.reshape(m, n_d, N_TYPES), axis=1)
    # remove the self pair: d2 = 0 lands in the first shell of own type
    cum[np.arange(m)[:, None], :, types[q_idx][:, None]] -= 1
    out[:] = cum.astype(np.uint32)


def count_in_radii(
    index: SpatialIndex, radii: Sequence[float], threads: int = 1
) -> NeighborCounts:
    """Exact cumulative neighbor counts per (cell, radius, type).

    Boundary rule is inclusive (d <= r) and the cell itself is excluded.
    ``threads`` only partitions the query set; each worker writes a disjoint
    output slice, so results are identical for any thread count.
    """
    radii_arr = np.ascontiguousarray(radii, dtype=np.float64)
    if radii_arr.ndim != 1 or radii_arr.size == 0:
        raise ValueError("radii must be a non-empty 1-D sequence")
    if radii_arr[0] <= 0 or np.any(np.diff(radii_arr) <= 0):
        raise ValueError("radii must be strictly ascending and positive")
    n = index.source.n_total
    r2 = radii_arr * radii_arr
    counts = np.zeros((n, radii_arr.size, N_TYPES), dtype=np.uint32)
    chunks = [
        np.arange(s, min(s + _QUERY_CHUNK, n), dtype=np.int64)
        for s in range(0, n, _QUERY_CHUNK)
    ]
    if threads <= 1 or len(chunks) <= 1:
        for q in chunks:
            _count_chunk(index, q, r2, counts[q[0] : q[-1] + 1])
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(_count_chunk, index, q, r2, counts[q[0] : q[-1] + 1])
                for q in chunks
            ]
            for f in futures:
                f.result()
    return NeighborCounts(radii=radii_arr, counts=counts)


def count_in_radii_brute(cloud: CellCloud, radii: Sequence[float]) -> NeighborCounts:
    """Reference O(N^2) twin of :func:`count_in_radii` (same boundary rule)."""
    radii_arr = np.ascontiguousarray(radii, dtype=np.float64)
    n = cloud.n_total
    r2 = radii_arr * radii_arr
    onehot = np.eye(N_TYPES, dtype=np.int64)[cloud.types]
    counts = np.zeros((n, radii_arr.size, N_TYPES), dtype=np.uint32)
    step = max(1, int(2e7) // max(n, 1))
    for s in range(0, n, step):
        e = min(s + step, n)
        dx = cloud.xy[s:e, 0][:, None] - cloud.xy[None, :, 0]
        dy = cloud.xy[s:e, 1][:, None] - cloud.xy[None, :, 1]
        d2 = dx * dx + dy * dy
        for j, rj2 in enumerate(r2):
            within = d2 <= rj2
            counts[s:e, j, :] = within.astype(np.int64) @ onehot
    for i in range(n):  # self always falls inside every radius
        counts[i, :, cloud.types[i]] -= 1
    return NeighborCounts(radii=radii_arr, counts=counts)


def _nn_mean_xy(xy: np.ndarray) -> float:
    """Mean nearest-neighbor distance of a raw coordinate array (n >= 2)."""
    tree = cKDTree(xy)
    dist, _ = tree.query(xy, k=2)
    return float(np.mean(dist[:, 1]))


def mean_nn_distance(cloud: CellCloud) -> float:
    """Mean over cells of the distance to the nearest other cell."""
    if cloud.n_total < 2:
        raise TooFewCells("mean nearest-neighbor distance needs at least 2 cells")
    return _nn_mean_xy(cloud.xy)


def mean_nn_distance_brute(cloud: CellCloud) -> float:
    if cloud.n_total < 2:
        raise TooFewCells("mean nearest-neighbor distance needs at least 2 cells")
    n = cloud.n_total
    nn = np.empty(n, dtype=np.float64)
    step = max(1, int(2e7) // n)
    for s in range(0, n, step):
        e = min(s + step, n)
        dx = cloud.xy[s:e, 0][:, None] - cloud.xy[None, :, 0]
        dy = cloud.xy[s:e, 1][:, None] - cloud.xy[None, :, 1]
        d2 = dx * dx + dy * dy
        d2[np.arange(s, e) - s, np.arange(s, e)] = np.inf
        nn[s:e] = np.sqrt(d2.min(axis=1))
    return float(np.mean(nn))


def _augmented_d2(
    xy: np.ndarray, labels: Optional[np.ndarray], j: int, penalty: float
) -> np.ndarray:
    """Squared distance from every point to point j in the augmented space.

    With labels, differing tags add ``2*gamma**2`` (the squared distance
    between two scaled one-hot corners). Written with the same scalar
    expression the brute twin uses so both routes round identically.
    """
    dx = xy[:, 0] - xy[j, 0]
    dy = xy[:, 1] - xy[j, 1]
    d2 = dx * dx + dy * dy
    if labels is not None and penalty != 0.0:
        d2 = d2 + penalty * (labels != labels[j])
    return d2


def fps(
    points: np.ndarray,
    labels: Optional[np.ndarray],
    n: int,
    gamma: float = 0.0,
) -> np.ndarray:
    """Greedy farthest-point sampling, optionally label-augmented.

    Sampling runs in the space [x, y, gamma*onehot(label)]; two points with
    different labels gain an extra squared distance of 2*gamma^2. The start
    point is the lexicographically smallest (x, y, tag) and every later pick
    maximises the minimum distance to the selected set, ties falling to the
    smallest index. Returns the selected indices in pick order.
    """
    xy = np.ascontiguousarray(points, dtype=np.float64)
    m = xy.shape[0]
    if not 0 <= n <= m:
        raise ValueError(f"cannot sample {n} anchors from {m} points")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    if n == 0:
        return np.empty(0, dtype=np.int64)
    lab = None if labels is None else np.ascontiguousarray(labels)
    if lab is None:
        start = int(np.lexsort((xy[:, 1], xy[:, 0]))[0])
    else:
        start = int(np.lexsort((lab, xy[:, 1], xy[:, 0]))[0])
    penalty = 2.0 * gamma * gamma
    out = np.empty(n, dtype=np.int64)
    out[0] = start
    min_d2 = _augmented_d2(xy, lab, start, penalty)
    min_d2[start] = -np.inf  # never re-pick a selected point
    for step in range(1, n):
        nxt = int(np.argmax(min_d2))  # first occurrence = smallest index
        out[step] = nxt
        d2 = _augmented_d2(xy, lab, nxt, penalty)
        np.minimum(min_d2, d2, out=min_d2)
        min_d2[nxt] = -np.inf
    return out


def fps_brute(
    points: np.ndarray,
    labels: Optional[np.ndarray],
    n: int,
    gamma: float = 0.0,
) -> np.ndarray:
    """Straight-line O(N*n) twin of :func:`fps` (python loops, no reuse)."""
    xy = np.ascontiguousarray(points, dtype=np.float64)
    m = xy.shape[0]
    if n == 0:
        return np.empty(0, dtype=np.int64)
    lab = None if labels is None else np.ascontiguousarray(labels)
    rows = []
    for i in range(m):
        key = (xy[i, 0], xy[i, 1]) if lab is None else (xy[i, 0], xy[i, 1], lab[i])
        rows.append((key, i))
    start = min(rows)[1]
    penalty = 2.0 * gamma * gamma
    selected = [start]
    chosen = {start}
    while len(selected) < n:
        best_i, best_d = -1, -np.inf
        for i in range(m):
            if i in chosen:
                continue
            dmin = np.inf
            for j in selected:
                dx = xy[i, 0] - xy[j, 0]
                dy = xy[i, 1] - xy[j, 1]
                d2 = dx * dx + dy * dy
                if lab is not None and penalty != 0.0 and lab[i] != lab[j]:
                    d2 = d2 + penalty
                if d2 < dmin:
                    dmin = d2
            if dmin > best_d:
                best_d, best_i = dmin, i
        selected.append(best_i)
        chosen.add(best_i)
    return np.asarray(selected, dtype=np.int64)


def knn_group(
    anchor_coords: np.ndarray, point_coords: np.ndarray, k: int
) -> np.ndarray:
    """For each anchor, indices of its k nearest points, ties by smaller index.

    Rows come back sorted ascending by (distance, index). Points can belong
    to any number of groups.
    """
    anchors = np.ascontiguousarray(anchor_coords, dtype=np.float64).reshape(-1, 2)
    pts = np.ascontiguousarray(point_coords, dtype=np.float64).reshape(-1, 2)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} points")
    a = anchors.shape[0]
    out = np.empty((a, k), dtype=np.int64)
    step = max(1, int(2e7) // max(n, 1))
    for s in range(0, a, step):
        e = min(s + step, a)
        dx = anchors[s:e, 0][:, None] - pts[None, :, 0]
        dy = anchors[s:e, 1][:, None] - pts[None, :, 1]
        d2 = dx * dx + dy * dy
        if k == n:
            out[s:e] = np.argsort(d2, axis=1, kind="stable")[:, :k]
            continue
        # argpartition cuts ties arbitrarily, so gather every candidate at or
        # below the k-th smallest value and resolve ties by index per row.
        kth = np.partition(d2, k - 1, axis=1)[:, k - 1]
        for row in range(e - s):
            cand = np.flatnonzero(d2[row] <= kth[row])
            sel = cand[np.argsort(d2[row, cand], kind="stable")[:k]]
            out[s + row] = sel
    return out


def knn_group_brute(
    anchor_coords: np.ndarray, point_coords: np.ndarray, k: int
) -> np.ndarray:
    """Per-anchor full sort twin of :func:`knn_group`."""
    anchors = np.ascontiguousarray(anchor_coords, dtype=np.float64).reshape(-1, 2)
    pts = np.ascontiguousarray(point_coords, dtype=np.float64).reshape(-1, 2)
    n = pts.shape[0]
    rows = []
    for ax, ay in anchors:
        scored = []
        for i in range(n):
            dx = ax - pts[i, 0]
            dy = ay - pts[i, 1]
            scored.append((dx * dx + dy * dy, i))
        scored.sort()
        rows.append([i for _, i in scored[:k]])
    return np.asarray(rows, dtype=np.int64)
