"""Geometric cluster trees and admissible block partitions of I x I."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

DEFAULT_ETA = 2.0
DEFAULT_NMIN = 32


@dataclass(eq=False)
class Cluster:
    """Node of a cluster tree: the index range ``perm[lo:hi]`` and its bounding box."""

    lo: int
    hi: int
    bbox_lo: np.ndarray
    bbox_hi: np.ndarray
    level: int = 0
    children: tuple = ()
    id: int = -1

    @property
    def size(self) -> int:
        return self.hi - self.lo

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def diam(self) -> float:
        return float(np.linalg.norm(self.bbox_hi - self.bbox_lo))

    def __repr__(self):
        return f"Cluster(id={self.id}, [{self.lo}:{self.hi}], level={self.level})"


@dataclass(eq=False)
class ClusterTree:
    root: Cluster
    perm: np.ndarray
    supports_lo: np.ndarray
    supports_hi: np.ndarray
    n_min: int
    nodes: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.perm.size

    @property
    def depth(self) -> int:
        return max(c.level for c in self.nodes)

    def leaves(self) -> list:
        return [c for c in self.nodes if c.is_leaf]

    def indices(self, c: Cluster) -> np.ndarray:
        """Original indices belonging to cluster ``c``."""
        return self.perm[c.lo:c.hi]


def _as_supports(supports):
    if isinstance(supports, tuple) and len(supports) == 2:
        lo, hi = (np.atleast_2d(np.asarray(a, float)) for a in supports)
    else:
        arr = np.asarray(supports, float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim == 2:
            lo = hi = arr
        elif arr.ndim == 3 and arr.shape[1] == 2:
            lo, hi = arr[:, 0, :], arr[:, 1, :]
        else:
            raise ConfigError(f"cannot interpret supports of shape {arr.shape}")
    if lo.shape != hi.shape:
        raise ConfigError("support lower/upper corners differ in shape")
    return np.ascontiguousarray(lo), np.ascontiguousarray(hi)


def build_cluster_tree(supports, n_min: int = DEFAULT_NMIN) -> ClusterTree:
    """Bisect the longest bounding-box axis at its midpoint until ``size <= n_min``.

    ``supports`` is a pair ``(lo, hi)`` of (n, d) arrays, an (n, 2, d) array,
    or an (n, d) array of points.  Indices go left when their support centre
    lies strictly below the split plane.
    """
    if n_min < 1:
        raise ConfigError(f"n_min must be >= 1, got {n_min}")
    lo, hi = _as_supports(supports)
    n = lo.shape[0]
    if n == 0:
        raise ConfigError("cannot cluster an empty index set")
    centers = 0.5 * (lo + hi)
    perm = np.arange(n)
    nodes = []

    def build(a, b, level):
        idx = perm[a:b]
        c = Cluster(a, b, lo[idx].min(axis=0), hi[idx].max(axis=0), level, (), len(nodes))
        nodes.append(c)
        if b - a <= n_min:
            return c
        axis = int(np.argmax(c.bbox_hi - c.bbox_lo))
        mid = 0.5 * (c.bbox_lo[axis] + c.bbox_hi[axis])
        left = centers[idx, axis] < mid
        nl = int(left.sum())
        if nl == 0 or nl == idx.size:
            # all centres on one side of the plane: halve the sorted range
            order = np.argsort(centers[idx, axis], kind="stable")
            perm[a:b] = idx[order]
            nl = idx.size // 2
        else:
            perm[a:b] = np.concatenate([idx[left], idx[~left]])
        c.children = (build(a, a + nl, level + 1), build(a + nl, b, level + 1))
        return c

    root = build(0, n, 0)
    return ClusterTree(root, perm, lo, hi, n_min, nodes)


def vertex_supports(mesh, indices=None):
    """Bounding boxes of the hat-function supports of mesh vertices."""
    pts = mesh.vertices if indices is None else mesh.vertices[indices]
    top = mesh.origin + mesh.length
    return np.maximum(pts - mesh.h, mesh.origin), np.minimum(pts + mesh.h, top)


def bbox_distance(lo1, hi1, lo2, hi2) -> float:
    gap = np.maximum(0.0, np.maximum(lo2 - hi1, lo1 - hi2))
    return float(np.sqrt(np.sum(gap * gap)))


def admissible(t: Cluster, s: Cluster, eta: float = DEFAULT_ETA) -> bool:
    """``min(diam X_t, diam X_s) <= eta * dist(X_t, X_s)`` on bounding boxes."""
    if not eta > 0:
        raise ConfigError(f"eta must be positive, got {eta}")
    dist = bbox_distance(t.bbox_lo, t.bbox_hi, s.bbox_lo, s.bbox_hi)
    return min(t.diam, s.diam) <= eta * dist


@dataclass(eq=False)
class Block:
    t: Cluster
    s: Cluster
    admissible: bool
    children: tuple = ()
    id: int = -1

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def shape(self):
        return self.t.size, self.s.size


class BlockPartition:
    """Leaves of the block cluster tree over ``row_tree x col_tree``.

    Blocks for other cluster pairs (needed as scratch structure by the
    H-arithmetic) come from :meth:`block`, which applies the same stopping
    rule and caches the result.
    """

    def __init__(self, row_tree: ClusterTree, col_tree: ClusterTree, eta=DEFAULT_ETA,
                 n_min=None):
        if not eta > 0:
            raise ConfigError(f"eta must be positive, got {eta}")
        self.row_tree = row_tree
        self.col_tree = col_tree
        self.eta = float(eta)
        self.n_min = int(row_tree.n_min if n_min is None else n_min)
        if self.n_min < 1:
            raise ConfigError(f"n_min must be >= 1, got {n_min}")
        self._cache = {}
        self._count = 0
        self.root = self.block(row_tree.root, col_tree.root)
        self.leaves = []
        stack = [self.root]
        while stack:
            b = stack.pop()
            if b.is_leaf:
                self.leaves.append(b)
            else:
                stack.extend(reversed(b.children))

    def block(self, t: Cluster, s: Cluster) -> Block:
        key = (t.id, s.id)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        adm = admissible(t, s, self.eta)
        b = Block(t, s, adm, (), self._count)
        self._count += 1
        stop = adm or min(t.size, s.size) <= self.n_min or t.is_leaf or s.is_leaf
        if not stop:
            b.children = tuple(self.block(ti, sj) for ti in t.children for sj in s.children)
        self._cache[key] = b
        return b

    def __iter__(self):
        return iter(self.leaves)

    def __len__(self):
        return len(self.leaves)

    @property
    def n_admissible(self) -> int:
        return sum(b.admissible for b in self.leaves)

    def admissible_fraction(self) -> float:
        area = sum(b.t.size * b.s.size for b in self.leaves if b.admissible)
        return area / (self.row_tree.n * self.col_tree.n)

    def dump_csv(self, path) -> Path:
        """Columns ``block_id,row_lo,row_hi,col_lo,col_hi,admissible``.

        Ranges are half-open positions in the cluster-permuted ordering.
        """
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["block_id", "row_lo", "row_hi", "col_lo", "col_hi", "admissible"])
            for i, b in enumerate(self.leaves):
                w.writerow([i, b.t.lo, b.t.hi, b.s.lo, b.s.hi, int(b.admissible)])
        return path


def build_block_partition(row_tree, col_tree, eta=DEFAULT_ETA, n_min=None) -> BlockPartition:
    return BlockPartition(row_tree, col_tree, eta, n_min)


def mesh_partition(mesh, eta=DEFAULT_ETA, n_min=DEFAULT_NMIN) -> BlockPartition:
    """Partition for the interior-vertex unknowns of ``mesh``."""
    tree = build_cluster_tree(vertex_supports(mesh, mesh.interior), n_min)
    return BlockPartition(tree, tree, eta, n_min)
