"""
Frame-to-graph transformation with k-nearest-neighbour edges.

Each destination node i receives edges j -> i from its min(k, N-1) nearest
neighbours. Neighbours are ordered by (squared distance, index), so exact ties
resolve to the smaller particle index.
"""

import heapq
import logging
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from utils.common_utils import ArgumentError

logger = logging.getLogger(__name__)

LEAF_SIZE = 16
BRUTE_FORCE_MAX_N = 64


class GraphConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    k: int = Field(8, ge=1)
    with_edge_attrs: bool = False


@dataclass(frozen=True)
class FrameGraph:
    """
    KNN graph of one frame.

    edges is an (E, 2) integer array of (src j, dst i) pairs in destination-major,
    (distance, index)-sorted order. edge_attrs, when present, is (E, 1).
    """
    node_features: np.ndarray
    edges: np.ndarray
    labels: np.ndarray
    k: int
    edge_attrs: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.node_features.shape[0]

    @property
    def src(self) -> np.ndarray:
        return self.edges[:, 0]

    @property
    def dst(self) -> np.ndarray:
        return self.edges[:, 1]


def _squared_distances(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    dx = points[:, 0] - query[0]
    dy = points[:, 1] - query[1]
    dz = points[:, 2] - query[2]
    return dx * dx + dy * dy + dz * dz


def _brute_force_neighbors(positions: np.ndarray, k: int) -> list[list[int]]:
    n = positions.shape[0]
    indices = np.arange(n)
    result = []
    for i in range(n):
        d2 = _squared_distances(positions, positions[i])
        d2[i] = np.inf
        order = np.lexsort((indices, d2))[:k]
        result.append([int(j) for j in order])
    return result


class _KdNode:
    __slots__ = ("axis", "split", "left", "right", "members")

    def __init__(self, axis=0, split=0.0, left=None, right=None, members=None):
        self.axis = axis
        self.split = split
        self.left = left
        self.right = right
        self.members = members


class KdTree:
    """Median-split kd-tree over 3D points with bounded k-NN queries."""

    def __init__(self, positions: np.ndarray, leaf_size: int = LEAF_SIZE):
        self.points = positions
        self.leaf_size = leaf_size
        self.root = self._build(np.arange(positions.shape[0]))

    def _build(self, members: np.ndarray) -> _KdNode:
        if members.shape[0] <= self.leaf_size:
            return _KdNode(members=members)
        subset = self.points[members]
        axis = int(np.argmax(subset.max(axis=0) - subset.min(axis=0)))
        half = members.shape[0] // 2
        order = np.argpartition(subset[:, axis], half)
        left, right = members[order[:half]], members[order[half:]]
        split = float(self.points[right, axis].min())
        return _KdNode(axis=axis, split=split, left=self._build(left), right=self._build(right))

    def query(self, index: int, k: int) -> list[int]:
        """Returns the k nearest other points of point `index`, sorted by (distance, index)."""
        query = self.points[index]
        # Max-heap of the current best k as (-d2, -j).
        heap: list[tuple[float, int]] = []

        def visit(node: _KdNode) -> None:
            if node.members is not None:
                d2 = _squared_distances(self.points[node.members], query)
                for j, dist in zip(node.members.tolist(), d2.tolist()):
                    if j == index:
                        continue
                    item = (-dist, -j)
                    if len(heap) < k:
                        heapq.heappush(heap, item)
                    elif item > heap[0]:
                        heapq.heapreplace(heap, item)
                return
            gap = query[node.axis] - node.split
            near, far = (node.left, node.right) if gap < 0 else (node.right, node.left)
            visit(near)
            # Equal distances must still be visited: they may win on index.
            if len(heap) < k or gap * gap <= -heap[0][0]:
                visit(far)

        visit(self.root)
        ranked = sorted((-neg_d2, -neg_j) for neg_d2, neg_j in heap)
        return [j for _, j in ranked]


def knn_neighbors(positions, k: int) -> list[list[int]]:
    """
    For each particle, the min(k, N-1) nearest other particles.

    Raises:
        ArgumentError: If N < 2 or k < 1.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise ArgumentError(f"positions must have shape (N, 3), got {positions.shape}")
    n = positions.shape[0]
    if n < 2:
        raise ArgumentError(f"knn needs at least 2 points, got {n}")
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    k_eff = min(k, n - 1)
    if n <= BRUTE_FORCE_MAX_N:
        return _brute_force_neighbors(positions, k_eff)
    tree = KdTree(positions)
    return [tree.query(i, k_eff) for i in range(n)]


def build_graph(positions, features, labels, config: GraphConfig) -> FrameGraph:
    """
    Builds the KNN graph of one frame with edges j -> i and labels attached verbatim.

    Raises:
        ArgumentError: If positions, features and labels disagree on N.
    """
    positions = np.asarray(positions, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n = positions.shape[0]
    if features.ndim != 2 or features.shape[0] != n:
        raise ArgumentError(f"features shape {features.shape} does not match {n} positions")
    if labels.shape != (n, 3):
        raise ArgumentError(f"labels shape {labels.shape} does not match ({n}, 3)")

    neighbors = knn_neighbors(positions, config.k)
    src = np.fromiter((j for row in neighbors for j in row), dtype=np.int64)
    dst = np.repeat(np.arange(n, dtype=np.int64), [len(row) for row in neighbors])
    edges = np.stack([src, dst], axis=1)

    edge_attrs = None
    if config.with_edge_attrs:
        delta = positions[dst] - positions[src]
        edge_attrs = np.sqrt(np.sum(delta * delta, axis=1)).reshape(-1, 1)
    return FrameGraph(node_features=features, edges=edges, labels=labels, k=config.k, edge_attrs=edge_attrs)
