"""Packed R-tree: brute-force query equality, invariants, determinism."""

import math

import numpy as np
import pytest

from d123.strtree import StrTree


def random_rects(rng: np.random.Generator, n: int, scale=1000.0) -> np.ndarray:
    lo = rng.uniform(-scale, scale, size=(n, 2))
    size = rng.uniform(0.0, scale / 20.0, size=(n, 2))
    return np.hstack([lo, lo + size])


def brute_rect(rects: np.ndarray, q) -> np.ndarray:
    qx0, qy0, qx1, qy1 = q
    hit = (
        (rects[:, 0] <= qx1)
        & (rects[:, 2] >= qx0)
        & (rects[:, 1] <= qy1)
        & (rects[:, 3] >= qy0)
    )
    return np.flatnonzero(hit)


@pytest.mark.parametrize("n", [0, 1, 2, 9, 10, 11, 100, 1000])
def test_invariants_hold_for_many_sizes(n):
    rng = np.random.default_rng(40 + n)
    tree = StrTree(random_rects(rng, n))
    tree.check_invariants()
    assert tree.num_entries == n


@pytest.mark.parametrize("capacity", [2, 3, 10, 16])
def test_invariants_hold_for_many_capacities(capacity):
    rng = np.random.default_rng(41)
    tree = StrTree(random_rects(rng, 500), node_capacity=capacity)
    tree.check_invariants()
    n_leaves = len(tree.levels[0].rects)
    assert tree.height == math.ceil(math.log(n_leaves, capacity))


def test_rect_queries_equal_brute_force():
    rng = np.random.default_rng(42)
    rects = random_rects(rng, 2000)
    tree = StrTree(rects)
    for _ in range(300):
        center = rng.uniform(-1100, 1100, size=2)
        half = rng.uniform(0, 200, size=2)
        q = (center[0] - half[0], center[1] - half[1], center[0] + half[0], center[1] + half[1])
        np.testing.assert_array_equal(tree.query_rect(q), brute_rect(rects, q))


def test_radius_query_is_the_box_prefilter():
    rng = np.random.default_rng(43)
    rects = random_rects(rng, 500)
    tree = StrTree(rects)
    for _ in range(100):
        x, y = rng.uniform(-1100, 1100, size=2)
        r = float(rng.uniform(0, 300))
        np.testing.assert_array_equal(
            tree.query_point_radius(x, y, r),
            brute_rect(rects, (x - r, y - r, x + r, y + r)),
        )


def test_touching_edges_count_as_intersection():
    rects = np.array([[0.0, 0.0, 1.0, 1.0], [5.0, 5.0, 6.0, 6.0]])
    tree = StrTree(rects)
    np.testing.assert_array_equal(tree.query_rect((1.0, 1.0, 2.0, 2.0)), [0])
    np.testing.assert_array_equal(tree.query_rect((2.0, 2.0, 3.0, 3.0)), [])


def test_point_rectangles_are_searchable():
    pts = np.random.default_rng(44).uniform(-10, 10, size=(50, 2))
    rects = np.hstack([pts, pts])  # zero-area boxes
    tree = StrTree(rects)
    tree.check_invariants()
    got = tree.query_rect((0.0, 0.0, 10.0, 10.0))
    np.testing.assert_array_equal(got, brute_rect(rects, (0, 0, 10, 10)))


def test_empty_tree_queries_cleanly():
    tree = StrTree(np.empty((0, 4)))
    tree.check_invariants()
    assert tree.root_rect is None
    assert tree.height == 0
    assert tree.query_rect((0, 0, 1, 1)).size == 0


def test_duplicate_rectangles_resolved_by_tie_key():
    rects = np.tile(np.array([[0.0, 0.0, 1.0, 1.0]]), (37, 1))
    tree = StrTree(rects)
    tree.check_invariants()
    np.testing.assert_array_equal(tree.query_rect((0, 0, 1, 1)), np.arange(37))


def test_builds_are_deterministic():
    rng = np.random.default_rng(45)
    rects = random_rects(rng, 800)
    a = StrTree(rects)
    b = StrTree(rects.copy())
    np.testing.assert_array_equal(a.entry_order, b.entry_order)
    assert len(a.levels) == len(b.levels)
    for la, lb in zip(a.levels, b.levels):
        np.testing.assert_array_equal(la.rects, lb.rects)
        np.testing.assert_array_equal(la.child_start, lb.child_start)


def test_root_covers_everything():
    rng = np.random.default_rng(46)
    rects = random_rects(rng, 300)
    tree = StrTree(rects)
    root = tree.root_rect
    assert np.all(root[:2] <= rects[:, :2].min(axis=0))
    assert np.all(root[2:] >= rects[:, 2:].max(axis=0))


def test_input_validation():
    with pytest.raises(ValueError):
        StrTree(np.array([[0.0, 0.0, -1.0, 1.0]]))  # min > max
    with pytest.raises(ValueError):
        StrTree(np.array([[0.0, 0.0, np.nan, 1.0]]))
    with pytest.raises(ValueError):
        StrTree(np.empty((0, 4)), node_capacity=1)
    with pytest.raises(ValueError):
        StrTree(np.zeros((3, 4)), ids=np.arange(2))
