"""Exact K-nearest-neighbour search over a target feature set.

The ball tree is stored in flat arrays: points are permuted once so that
each node owns a contiguous slice ``[start, end)`` of the reordered point
matrix.  Internal nodes are split at the median of the dimension with the
widest spread.  A node's centroid is the mean of its points and its radius
the largest centroid distance.

Every distance comes from :func:`pair_distances`, which sums squared
differences along a contiguous last axis.  numpy's reduction order there
depends only on the vector length, so every path (tree, brute force,
single or batched query) produces bit-identical values for the same pair
of vectors.

Queries are answered in batches: the set of still-active queries descends
the tree together and a query leaves a subtree as soon as the ball bound
exceeds its current k-th distance.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

DEFAULT_LEAF_SIZE = 16
# pruning slack; absorbs rounding in centroid/radius so ties are never lost
_PRUNE_SLACK = 1e-9


@dataclass(frozen=True)
class FeatureSet:
    points: np.ndarray
    source_ids: np.ndarray | None = None

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2:
            raise ValueError(f"feature set must be 2-D, got shape {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("feature set is empty")
        object.__setattr__(self, "points", pts)
        ids = np.arange(len(pts)) if self.source_ids is None else np.asarray(self.source_ids)
        if ids.shape != (len(pts),):
            raise ValueError("source_ids must have one entry per point")
        object.__setattr__(self, "source_ids", ids)

    @property
    def M(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def pair_distances(Q: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Euclidean distances, shape (len(Q), len(P))."""
    diff = np.ascontiguousarray(Q[:, None, :] - P[None, :, :])
    return np.sqrt((diff * diff).sum(axis=-1))


def _row_distances(block: np.ndarray, q: np.ndarray) -> np.ndarray:
    return pair_distances(q[None, :], block)[0]


def _check_query(fs: FeatureSet, q, k: int) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.shape[0] != fs.dim:
        raise ValueError(f"query has dimension {q.shape[0]}, feature set has {fs.dim}")
    if not 1 <= k <= fs.M:
        raise ValueError(f"k must be in [1, {fs.M}], got {k}")
    return q


def _check_batch(fs: FeatureSet, Q, k: int) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    if Q.ndim != 2 or Q.shape[1] != fs.dim:
        raise ValueError(f"queries have dimension {Q.shape[-1]}, feature set has {fs.dim}")
    if not 1 <= k <= fs.M:
        raise ValueError(f"k must be in [1, {fs.M}], got {k}")
    return Q


def _merge(best_d, best_i, dist, idx, k):
    """Row-wise top-k of the union of current best and new candidates."""
    cand_d = np.concatenate([best_d, dist], axis=1)
    cand_i = np.concatenate([best_i, np.broadcast_to(idx, dist.shape)], axis=1)
    order = np.lexsort((cand_i, cand_d), axis=-1)[:, :k]
    return np.take_along_axis(cand_d, order, 1), np.take_along_axis(cand_i, order, 1)


def _as_lists(best_i, best_d):
    return [list(zip(i, d)) for i, d in zip(best_i.tolist(), best_d.tolist())]


def brute_force_knn(fs: FeatureSet, q, k: int) -> list[tuple[int, float]]:
    """Exhaustive scan; ascending distance, ties by lower index."""
    q = _check_query(fs, q, k)
    return brute_force_knn_batch(fs, q[None, :], k)[0]


def brute_force_knn_batch(fs: FeatureSet, Q, k: int) -> list[list[tuple[int, float]]]:
    Q = _check_batch(fs, Q, k)
    empty_d = np.empty((len(Q), 0))
    best_d, best_i = _merge(empty_d, empty_d.astype(np.int64), pair_distances(Q, fs.points),
                            np.arange(fs.M), k)
    return _as_lists(best_i, best_d)


@dataclass
class BallTree:
    fs: FeatureSet
    leaf_size: int
    perm: np.ndarray          # tree order -> original index
    data: np.ndarray          # points in tree order
    start: np.ndarray
    end: np.ndarray
    left: np.ndarray          # -1 for leaves
    right: np.ndarray
    centroid: np.ndarray
    radius: np.ndarray
    stats: dict = field(default_factory=lambda: {"queries": 0, "distance_evals": 0})

    @property
    def n_nodes(self) -> int:
        return len(self.start)

    def is_leaf(self, node: int) -> bool:
        return self.left[node] < 0

    def leaves(self) -> list[np.ndarray]:
        return [self.perm[self.start[i]:self.end[i]] for i in range(self.n_nodes) if self.is_leaf(i)]

    def node_points(self, node: int) -> np.ndarray:
        return self.data[self.start[node]:self.end[node]]


def build_balltree(fs: FeatureSet, leaf_size: int = DEFAULT_LEAF_SIZE) -> BallTree:
    if leaf_size < 1:
        raise ValueError(f"leaf_size must be >= 1, got {leaf_size}")
    if not isinstance(fs, FeatureSet):
        fs = FeatureSet(fs)
    perm = np.arange(fs.M)
    starts, ends, lefts, rights, cents, radii = [], [], [], [], [], []

    def new_node(s, e):
        pts = fs.points[perm[s:e]]
        c = pts.mean(axis=0)
        starts.append(s)
        ends.append(e)
        lefts.append(-1)
        rights.append(-1)
        cents.append(c)
        radii.append(float(_row_distances(np.ascontiguousarray(pts), c).max()) + _PRUNE_SLACK)
        return len(starts) - 1

    root = new_node(0, fs.M)
    stack = [root]
    while stack:
        node = stack.pop()
        s, e = starts[node], ends[node]
        if e - s <= leaf_size:
            continue
        pts = fs.points[perm[s:e]]
        dim = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
        # stable sort keeps equal coordinates in index order -> deterministic
        order = np.argsort(pts[:, dim], kind="stable")
        perm[s:e] = perm[s:e][order]
        mid = s + (e - s) // 2
        lefts[node] = new_node(s, mid)
        rights[node] = new_node(mid, e)
        stack.extend([rights[node], lefts[node]])

    return BallTree(
        fs=fs,
        leaf_size=leaf_size,
        perm=perm,
        data=np.ascontiguousarray(fs.points[perm]),
        start=np.array(starts),
        end=np.array(ends),
        left=np.array(lefts),
        right=np.array(rights),
        centroid=np.array(cents),
        radius=np.array(radii),
    )


def knn_query(tree: BallTree, q, k: int) -> list[tuple[int, float]]:
    """The k nearest stored points to ``q`` as (index, distance), ascending.

    Ties are broken by lower point index, matching :func:`brute_force_knn`.
    """
    q = _check_query(tree.fs, q, k)
    return knn_query_many(tree, q[None, :], k)[0]


def knn_query_many(tree: BallTree, Q, k: int) -> list[list[tuple[int, float]]]:
    """Batched :func:`knn_query`; one result list per row of ``Q``."""
    Q = _check_batch(tree.fs, Q, k)
    nq = len(Q)
    best_d = np.full((nq, k), np.inf)
    best_i = np.full((nq, k), np.iinfo(np.int64).max)
    evals = 0
    stack = [(0, np.arange(nq))]
    while stack:
        node, active = stack.pop()
        gap = pair_distances(Q[active], tree.centroid[node:node + 1])[:, 0] - tree.radius[node]
        active = active[gap - _PRUNE_SLACK <= best_d[active, -1]]
        if active.size == 0:
            continue
        left = tree.left[node]
        if left < 0:
            s, e = tree.start[node], tree.end[node]
            d = pair_distances(Q[active], tree.data[s:e])
            best_d[active], best_i[active] = _merge(best_d[active], best_i[active], d, tree.perm[s:e], k)
            evals += active.size * (e - s)
            continue
        right = tree.right[node]
        # descend into the child nearer to most active queries first
        near = pair_distances(Q[active], tree.centroid[[left, right]])
        votes = int(np.count_nonzero(near[:, 0] <= near[:, 1]))
        first, second = (left, right) if 2 * votes >= active.size else (right, left)
        stack.append((second, active))
        stack.append((first, active))
    tree.stats["queries"] += nq
    tree.stats["distance_evals"] += evals
    return _as_lists(best_i, best_d)


def knn_query_batch(tree: BallTree, queries: np.ndarray, k: int, workers: int = 1):
    """Query each row of ``queries``; results are returned in input order.

    With ``workers > 1`` the rows are split into contiguous chunks searched
    concurrently (the tree is read-only).
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if workers <= 1 or len(queries) < 2 * workers:
        return knn_query_many(tree, queries, k)
    chunks = np.array_split(queries, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda c: knn_query_many(tree, c, k), chunks))
    return [r for part in parts for r in part]


class UtilizationTracker:
    """Set of feature indices selected at least once during a run."""

    def __init__(self, M: int):
        if M < 1:
            raise ValueError("M must be >= 1")
        self.M = M
        self.touched: set[int] = set()

    def record(self, indices) -> None:
        for i in indices:
            i = int(i)
            if not 0 <= i < self.M:
                raise IndexError(f"index {i} outside [0, {self.M})")
            self.touched.add(i)


def utilization(tracker: UtilizationTracker) -> float:
    return len(tracker.touched) / tracker.M


def mean_of(fs: FeatureSet, indices) -> np.ndarray:
    """Mean of the selected stored vectors, summed in ascending index order."""
    idx = np.sort(np.asarray(indices, dtype=np.int64))
    return fs.points[idx].mean(axis=0)


def knn_mean_target(tree: BallTree, q, k: int, tracker: UtilizationTracker | None = None) -> np.ndarray:
    hits = knn_query(tree, q, k)
    idx = [i for i, _ in hits]
    if tracker is not None:
        tracker.record(idx)
    return mean_of(tree.fs, idx)
