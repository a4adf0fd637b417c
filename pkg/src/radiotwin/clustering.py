"""BIRCH clustering of outage positions via clustering-feature trees.

Single-pass insertion into a CF tree with branching factor B and threshold
T; no global refinement phase.  The compactness test is the RMS radius of
the merged feature (canonical BIRCH); a diameter criterion is available
behind a flag.  Input points are canonically pre-sorted by (x, y) before
insertion so results are invariant to input permutation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np


@dataclass
class ClusterFeature:
    """Additive summary [count, linear sum, square sum] of a point set."""

    count: int
    linear_sum: np.ndarray  # (2,)
    square_sum: float

    @classmethod
    def of_point(cls, p: np.ndarray) -> "ClusterFeature":
        return cls(1, p.astype(float).copy(), float(p @ p))

    @classmethod
    def empty(cls) -> "ClusterFeature":
        return cls(0, np.zeros(2), 0.0)

    def merged(self, other: "ClusterFeature") -> "ClusterFeature":
        return ClusterFeature(
            self.count + other.count,
            self.linear_sum + other.linear_sum,
            self.square_sum + other.square_sum,
        )

    def add_inplace(self, other: "ClusterFeature") -> None:
        self.count += other.count
        self.linear_sum = self.linear_sum + other.linear_sum
        self.square_sum += other.square_sum

    @property
    def centroid(self) -> np.ndarray:
        return self.linear_sum / self.count

    @property
    def radius(self) -> float:
        """RMS distance of members to the centroid."""
        c = self.centroid
        return math.sqrt(max(0.0, self.square_sum / self.count - float(c @ c)))

    @property
    def diameter(self) -> float:
        """RMS pairwise distance between members."""
        if self.count < 2:
            return 0.0
        n = self.count
        val = (2.0 * n * self.square_sum - 2.0 * float(self.linear_sum @ self.linear_sum)) / (
            n * (n - 1)
        )
        return math.sqrt(max(0.0, val))


Criterion = Literal["rms", "diameter"]


def _fits(cf: ClusterFeature, threshold: float, criterion: Criterion) -> bool:
    if criterion == "rms":
        return cf.radius <= threshold
    return cf.diameter <= threshold


class _Entry:
    __slots__ = ("cf", "members")

    def __init__(self, cf: ClusterFeature, members: list[int]):
        self.cf = cf
        self.members = members


class _Node:
    __slots__ = ("leaf", "entries", "children", "cfs")

    def __init__(self, leaf: bool):
        self.leaf = leaf
        self.entries: list[_Entry] = []  # leaf payload
        self.children: list[_Node] = []  # internal payload
        self.cfs: list[ClusterFeature] = []  # per-child aggregates (internal)

    def cf_total(self) -> ClusterFeature:
        agg = ClusterFeature.empty()
        if self.leaf:
            for e in self.entries:
                agg.add_inplace(e.cf)
        else:
            for cf in self.cfs:
                agg.add_inplace(cf)
        return agg


class CfTree:
    """Clustering-feature tree; leaf entries are the final clusters."""

    def __init__(self, threshold: float, branching: int = 50, criterion: Criterion = "rms"):
        if threshold <= 0:
            raise ValueError("threshold T must be > 0")
        if branching < 2:
            raise ValueError("branching factor must be >= 2")
        self.threshold = threshold
        self.branching = branching
        self.criterion: Criterion = criterion
        self.root = _Node(leaf=True)

    # -- insertion ---------------------------------------------------------

    def insert(self, point: np.ndarray, index: int) -> None:
        split = self._insert(self.root, np.asarray(point, float), index)
        if split is not None:
            left, right = split
            new_root = _Node(leaf=False)
            new_root.children = [left, right]
            new_root.cfs = [left.cf_total(), right.cf_total()]
            self.root = new_root

    def _insert(self, node: _Node, p: np.ndarray, idx: int):
        if node.leaf:
            cf_p = ClusterFeature.of_point(p)
            if node.entries:
                d = [float(np.sum((e.cf.centroid - p) ** 2)) for e in node.entries]
                j = int(np.argmin(d))
                merged = node.entries[j].cf.merged(cf_p)
                if _fits(merged, self.threshold, self.criterion):
                    node.entries[j].cf = merged
                    node.entries[j].members.append(idx)
                    return None
            node.entries.append(_Entry(cf_p, [idx]))
            if len(node.entries) > self.branching:
                return self._split_leaf(node)
            return None

        d = [float(np.sum((cf.centroid - p) ** 2)) for cf in node.cfs]
        j = int(np.argmin(d))
        split = self._insert(node.children[j], p, idx)
        if split is None:
            node.cfs[j] = node.cfs[j].merged(ClusterFeature.of_point(p))
            return None
        left, right = split
        node.children[j] = left
        node.cfs[j] = left.cf_total()
        node.children.insert(j + 1, right)
        node.cfs.insert(j + 1, right.cf_total())
        if len(node.children) > self.branching:
            return self._split_internal(node)
        return None

    def _split_leaf(self, node: _Node):
        cents = np.array([e.cf.centroid for e in node.entries])
        a, b = _farthest_pair(cents)
        left, right = _Node(leaf=True), _Node(leaf=True)
        for i, e in enumerate(node.entries):
            da = float(np.sum((cents[i] - cents[a]) ** 2))
            db = float(np.sum((cents[i] - cents[b]) ** 2))
            (left if da <= db else right).entries.append(e)
        return left, right

    def _split_internal(self, node: _Node):
        cents = np.array([cf.centroid for cf in node.cfs])
        a, b = _farthest_pair(cents)
        left, right = _Node(leaf=False), _Node(leaf=False)
        for i, (ch, cf) in enumerate(zip(node.children, node.cfs)):
            da = float(np.sum((cents[i] - cents[a]) ** 2))
            db = float(np.sum((cents[i] - cents[b]) ** 2))
            tgt = left if da <= db else right
            tgt.children.append(ch)
            tgt.cfs.append(cf)
        return left, right

    # -- extraction --------------------------------------------------------

    def leaf_entries(self) -> list[_Entry]:
        out: list[_Entry] = []

        def walk(n: _Node):
            if n.leaf:
                out.extend(n.entries)
            else:
                for ch in n.children:
                    walk(ch)

        walk(self.root)
        return out


def _farthest_pair(cents: np.ndarray) -> tuple[int, int]:
    d2 = np.sum((cents[:, None, :] - cents[None, :, :]) ** 2, axis=2)
    ij = int(np.argmax(d2))
    return divmod(ij, len(cents))[0], int(ij % len(cents))


@dataclass(frozen=True)
class Cluster:
    members: tuple[int, ...]  # indices into the caller's point array
    centroid: tuple[float, float]
    radius: float
    cf: ClusterFeature

    @property
    def size(self) -> int:
        return len(self.members)


def birch_cluster(
    points,
    threshold: float,
    branching: int = 50,
    criterion: Criterion = "rms",
) -> list[Cluster]:
    """Group 2-D points into clusters whose CF radius stays within T.

    Deterministic and permutation-invariant: points are pre-sorted by
    (x, y) before single-pass insertion; members keep original indices.
    """
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return []
    if pts.ndim != 2 or pts.shape[1] != 2 or not np.all(np.isfinite(pts)):
        raise ValueError("points must be a finite (N, 2) array")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    tree = CfTree(threshold, branching, criterion)
    for i in order:
        tree.insert(pts[i], int(i))
    out = []
    for e in tree.leaf_entries():
        c = e.cf.centroid
        out.append(
            Cluster(
                members=tuple(sorted(e.members)),
                centroid=(float(c[0]), float(c[1])),
                radius=e.cf.radius,
                cf=e.cf,
            )
        )
    return out


def rank_clusters(clusters: list[Cluster]) -> list[Cluster]:
    """Descending UE count; centroid (x, y) lexicographic tie-break."""
    return sorted(clusters, key=lambda c: (-c.size, c.centroid[0], c.centroid[1]))
