"""Sort-Tile-Recursive packed R-tree over planar bounding rectangles.

Construction follows the classic STR bulk load: sort entries by x-center,
cut into vertical slices of ceil(sqrt(n / capacity)) * capacity entries,
sort each slice by y-center, pack nodes of ``capacity`` children, then
recurse on the node rectangles until a single root remains. Ties sort by
the caller-provided key (object id), so builds are deterministic.

The tree is stored as flat per-level arrays with contiguous child spans,
which keeps queries vectorized and makes the structural invariants cheap
to verify.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class _Level:
    rects: np.ndarray  # (n, 4) minx, miny, maxx, maxy
    child_start: np.ndarray  # (n,) span into the level below (or entries)
    child_end: np.ndarray


def _str_order(rects: np.ndarray, tie_keys: np.ndarray, capacity: int) -> np.ndarray:
    """Entry permutation after x-slicing and per-slice y-sorting."""
    n = rects.shape[0]
    cx = (rects[:, 0] + rects[:, 2]) * 0.5
    cy = (rects[:, 1] + rects[:, 3]) * 0.5
    # lexsort: last key is primary
    by_x = np.lexsort((tie_keys, cx))
    slice_size = math.ceil(math.sqrt(n / capacity)) * capacity
    order = np.empty(n, dtype=np.int64)
    for start in range(0, n, slice_size):
        chunk = by_x[start : start + slice_size]
        by_y = np.lexsort((tie_keys[chunk], cy[chunk]))
        order[start : start + len(chunk)] = chunk[by_y]
    return order


def _pack_level(rects: np.ndarray, capacity: int) -> _Level:
    """Group consecutive rows into parent nodes of ``capacity`` children."""
    n = rects.shape[0]
    count = math.ceil(n / capacity)
    start = np.arange(count, dtype=np.int64) * capacity
    end = np.minimum(start + capacity, n)
    parent = np.empty((count, 4))
    for i in range(count):
        block = rects[start[i] : end[i]]
        parent[i, 0] = block[:, 0].min()
        parent[i, 1] = block[:, 1].min()
        parent[i, 2] = block[:, 2].max()
        parent[i, 3] = block[:, 3].max()
    return _Level(rects=parent, child_start=start, child_end=end)


class StrTree:
    """Immutable packed R-tree; query results are entry positions (0..n-1)."""

    def __init__(self, rects: np.ndarray, ids=None, node_capacity: int = 10):
        if node_capacity < 2:
            raise ValueError("node_capacity must be >= 2")
        rects = np.asarray(rects, dtype=np.float64).reshape(-1, 4)
        if rects.size:
            if not np.all(np.isfinite(rects)):
                raise ValueError("bounding rectangles must be finite")
            if np.any(rects[:, 0] > rects[:, 2]) or np.any(rects[:, 1] > rects[:, 3]):
                raise ValueError("rectangles must satisfy min <= max")
        self.node_capacity = int(node_capacity)
        self.num_entries = rects.shape[0]

        if ids is None:
            tie = np.arange(self.num_entries, dtype=np.int64)
        else:
            tie = np.asarray(ids)
            if tie.shape[0] != self.num_entries:
                raise ValueError("ids must match rects length")

        if self.num_entries == 0:
            self.entry_order = np.empty(0, dtype=np.int64)
            self.entry_rects = rects
            self.levels: list[_Level] = []
            return

        order = _str_order(rects, tie, self.node_capacity)
        self.entry_order = order  # leaf-major permutation of original entries
        self.entry_rects = rects[order]

        levels = [_pack_level(self.entry_rects, self.node_capacity)]
        while levels[-1].rects.shape[0] > 1:
            below = levels[-1]
            n_below = below.rects.shape[0]
            # re-run STR on the node rectangles; permute the lower level so
            # every parent's children stay contiguous
            perm = _str_order(below.rects, np.arange(n_below, dtype=np.int64), self.node_capacity)
            below.rects = below.rects[perm]
            below.child_start = below.child_start[perm]
            below.child_end = below.child_end[perm]
            levels.append(_pack_level(below.rects, self.node_capacity))
        self.levels = levels

    # -- structure -----------------------------------------------------------

    @property
    def height(self) -> int:
        """Levels above the leaves; ceil(log_capacity(n_leaves)) by construction."""
        return max(len(self.levels) - 1, 0)

    @property
    def root_rect(self) -> np.ndarray | None:
        if not self.levels:
            return None
        return self.levels[-1].rects[0]

    def check_invariants(self) -> None:
        """Assert parent containment and exact leaf partition of entries."""
        if not self.levels:
            assert self.num_entries == 0
            return
        leaves = self.levels[0]
        seen = np.concatenate(
            [self.entry_order[s:e] for s, e in zip(leaves.child_start, leaves.child_end)]
        )
        assert len(seen) == self.num_entries
        assert len(np.unique(seen)) == self.num_entries, "entries must partition into leaves"
        for i in range(len(leaves.rects)):
            block = self.entry_rects[leaves.child_start[i] : leaves.child_end[i]]
            assert np.all(leaves.rects[i, :2] <= block[:, :2].min(axis=0) + 1e-12)
            assert np.all(leaves.rects[i, 2:] >= block[:, 2:].max(axis=0) - 1e-12)
        for upper, lower in zip(self.levels[1:], self.levels[:-1]):
            for i in range(len(upper.rects)):
                block = lower.rects[upper.child_start[i] : upper.child_end[i]]
                assert np.all(upper.rects[i, 0] <= block[:, 0] + 1e-12)
                assert np.all(upper.rects[i, 1] <= block[:, 1] + 1e-12)
                assert np.all(upper.rects[i, 2] >= block[:, 2] - 1e-12)
                assert np.all(upper.rects[i, 3] >= block[:, 3] - 1e-12)
        n_leaves = len(self.levels[0].rects)
        expected = max(math.ceil(math.log(n_leaves, self.node_capacity)), 0) if n_leaves > 1 else 0
        assert self.height == expected, f"height {self.height} != ceil(log_c({n_leaves}))"

    # -- queries ---------------------------------------------------------------

    def query_rect(self, rect) -> np.ndarray:
        """Entry positions whose rectangle intersects the query window."""
        qx0, qy0, qx1, qy1 = (float(v) for v in rect)
        if not self.levels:
            return np.empty(0, dtype=np.int64)

        def hits(rects: np.ndarray) -> np.ndarray:
            return (
                (rects[:, 0] <= qx1)
                & (rects[:, 2] >= qx0)
                & (rects[:, 1] <= qy1)
                & (rects[:, 3] >= qy0)
            )

        top = self.levels[-1]
        active = np.flatnonzero(hits(top.rects))
        spans = (top.child_start[active], top.child_end[active])
        for level in reversed(self.levels[:-1]):
            rows = _gather_spans(*spans)
            rows = rows[hits(level.rects[rows])]
            spans = (level.child_start[rows], level.child_end[rows])
        entry_rows = _gather_spans(*spans)
        entry_rows = entry_rows[hits(self.entry_rects[entry_rows])]
        out = self.entry_order[entry_rows]
        out.sort()
        return out

    def query_point_radius(self, x: float, y: float, radius: float) -> np.ndarray:
        """Candidate entries whose rectangle intersects the radius box."""
        return self.query_rect((x - radius, y - radius, x + radius, y + radius))


def _gather_spans(starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    if len(starts) == 0:
        return np.empty(0, dtype=np.int64)
    lengths = ends - starts
    total = int(lengths.sum())
    out = np.empty(total, dtype=np.int64)
    pos = 0
    for s, length in zip(starts, lengths):
        out[pos : pos + length] = np.arange(s, s + length)
        pos += length
    return out
