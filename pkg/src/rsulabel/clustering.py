"""Density clustering (DBSCAN, HDBSCAN), spatial indexing, and point scaling.

Both clustering routines are deterministic for a fixed input ordering. Tie
rules are part of the contract and documented on each function.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import as_points


class ParameterError(ValueError):
    """A routine received an out-of-range or inconsistent parameter."""


@dataclass(frozen=True)
class ClusterLabeling:
    """Per-point labels in [0, cluster_count), noise marked -1."""

    labels: np.ndarray
    cluster_count: int

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if labels.size:
            lo, hi = int(labels.min()), int(labels.max())
            if lo < -1 or hi >= self.cluster_count:
                raise ValueError("labels out of range for cluster_count")

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster_id)

    @property
    def noise_mask(self) -> np.ndarray:
        return self.labels == -1


class SpatialIndex:
    """Exact 3D neighbor queries over a fixed point set.

    Backed by a balanced median-split k-d tree (leaf size 16). Radius
    queries use closed balls (distance <= radius) and return indices in
    ascending order.
    """

    def __init__(self, points: np.ndarray):
        self.points = as_points(points)
        self._tree = cKDTree(self.points, leafsize=16, balanced_tree=True)

    def __len__(self) -> int:
        return len(self.points)

    def query_radius(self, center: np.ndarray, radius: float) -> np.ndarray:
        if radius < 0:
            raise ParameterError("radius must be non-negative")
        idx = self._tree.query_ball_point(np.asarray(center, dtype=np.float64), radius)
        return np.sort(np.asarray(idx, dtype=np.int64))

    def query_nearest(self, center: np.ndarray, k: int = 1):
        """Distances and indices of the k nearest points (ascending distance)."""
        if not 1 <= k <= len(self.points):
            raise ParameterError("k must be in [1, len(points)]")
        d, i = self._tree.query(np.asarray(center, dtype=np.float64), k=k)
        return np.atleast_1d(d), np.atleast_1d(np.asarray(i, dtype=np.int64))

    def pairs_within(self, radius: float) -> np.ndarray:
        """All index pairs (i < j) with distance <= radius, lexicographically sorted."""
        if radius < 0:
            raise ParameterError("radius must be non-negative")
        pairs = self._tree.query_pairs(radius, output_type="ndarray")
        if len(pairs) == 0:
            return pairs.reshape(0, 2).astype(np.int64)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        return pairs[order].astype(np.int64)


def scale_points(points: np.ndarray, scale: float) -> np.ndarray:
    """Multiply all coordinates by `scale` (> 0)."""
    if not np.isfinite(scale) or scale <= 0:
        raise ParameterError("scale must be a positive finite number")
    return as_points(points) * scale


def inverse_scale(points: np.ndarray, scale: float) -> np.ndarray:
    """Undo `scale_points` with the same factor."""
    if not np.isfinite(scale) or scale <= 0:
        raise ParameterError("scale must be a positive finite number")
    return as_points(points) / scale


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> ClusterLabeling:
    """Density clustering with an eps-ball neighborhood (closed, <= eps).

    A point is core when its neighborhood holds at least `min_pts` points,
    itself included. Clusters are the connected components of the core-core
    adjacency graph, numbered by their lowest-index core point. Non-core
    points in range of a core point join the lowest-numbered such cluster
    (deterministic border ties); everything else is noise (-1).
    """
    if not np.isfinite(eps) or eps <= 0:
        raise ParameterError("eps must be positive")
    if min_pts < 1:
        raise ParameterError("min_pts must be at least 1")
    pts = as_points(points)
    n = len(pts)
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return ClusterLabeling(labels, 0)

    tree = cKDTree(pts)
    pairs = tree.query_pairs(eps, output_type="ndarray")
    counts = np.ones(n, dtype=np.int64)
    if len(pairs):
        counts += np.bincount(pairs[:, 0], minlength=n)
        counts += np.bincount(pairs[:, 1], minlength=n)
    core = counts >= min_pts
    core_idx = np.flatnonzero(core)
    if core_idx.size == 0:
        return ClusterLabeling(labels, 0)

    if len(pairs):
        cc = pairs[core[pairs[:, 0]] & core[pairs[:, 1]]]
    else:
        cc = np.zeros((0, 2), dtype=np.int64)
    graph = sparse.csr_matrix(
        (np.ones(len(cc)), (cc[:, 0], cc[:, 1])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)

    # number clusters by the first core point they contain
    core_comps = comp[core_idx]
    uniq, first = np.unique(core_comps, return_index=True)
    cluster_of_comp = np.full(comp.max() + 1, -1, dtype=np.int64)
    for rank, u in enumerate(uniq[np.argsort(first)]):
        cluster_of_comp[u] = rank
    labels[core_idx] = cluster_of_comp[core_comps]
    k = int(uniq.size)

    if len(pairs):
        a_core = core[pairs[:, 0]]
        b_core = core[pairs[:, 1]]
        e1 = pairs[a_core & ~b_core]  # (core, border)
        e2 = pairs[~a_core & b_core]  # (border, core)
        border = np.concatenate([e1[:, 1], e2[:, 0]])
        owner = np.concatenate([labels[e1[:, 0]], labels[e2[:, 1]]])
        if border.size:
            best = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
            np.minimum.at(best, border, owner)
            hit = best < np.iinfo(np.int64).max
            labels[hit] = best[hit]
    return ClusterLabeling(labels, int(k))


def _mutual_reachability_mst(pts: np.ndarray, core_d: np.ndarray) -> np.ndarray:
    """Prim MST over the implicit mutual-reachability graph, O(n^2).

    Returns (n-1, 3) rows (u, v, weight). Ties during tree growth pick the
    lowest candidate index.
    """
    n = len(pts)
    in_tree = np.zeros(n, dtype=bool)
    best_w = np.full(n, np.inf)
    best_from = np.zeros(n, dtype=np.int64)
    edges = np.empty((n - 1, 3))
    current = 0
    in_tree[0] = True
    for i in range(n - 1):
        d = np.sqrt(((pts - pts[current]) ** 2).sum(axis=1))
        np.maximum(d, core_d, out=d)
        np.maximum(d, core_d[current], out=d)
        upd = ~in_tree & (d < best_w)
        best_w[upd] = d[upd]
        best_from[upd] = current
        masked = np.where(in_tree, np.inf, best_w)
        nxt = int(np.argmin(masked))
        edges[i] = (best_from[nxt], nxt, masked[nxt])
        in_tree[nxt] = True
        current = nxt
    return edges


class _UnionFind:
    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:  # path compression
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        self.parent[rb] = ra
        return ra


def hdbscan(points: np.ndarray, min_cluster_size: int) -> ClusterLabeling:
    """Hierarchical density clustering with excess-of-mass cluster selection.

    Pipeline: core distances (distance to the min_cluster_size-th nearest
    neighbor, the point itself counting as the first), mutual-reachability
    MST, single-linkage dendrogram (edges sorted by weight, then endpoint
    indices), condensed tree (a split is real only when both sides hold at
    least `min_cluster_size` points, lambda = 1/distance), per-cluster
    stability, and bottom-up excess-of-mass selection where an equal-
    stability parent beats its children. The root is selectable only when
    the condensed tree contains no other cluster, so one well-separated
    blob comes back as one cluster instead of all noise.

    Cluster ids are ordered by each cluster's lowest member point index.
    """
    if min_cluster_size < 2:
        raise ParameterError("min_cluster_size must be at least 2")
    pts = as_points(points)
    n = len(pts)
    if n < min_cluster_size:
        return ClusterLabeling(np.full(n, -1, dtype=np.int64), 0)

    tree = cKDTree(pts)
    knn_d, _ = tree.query(pts, k=min_cluster_size)
    core_d = knn_d[:, -1]

    edges = _mutual_reachability_mst(pts, core_d)
    order = np.lexsort((edges[:, 1], edges[:, 0], edges[:, 2]))
    edges = edges[order]

    # single-linkage dendrogram over 2n-1 nodes (leaves 0..n-1)
    uf = _UnionFind(n)
    node_of_root = np.arange(n, dtype=np.int64)
    size = np.ones(2 * n - 1, dtype=np.int64)
    children: dict[int, tuple[int, int, float]] = {}
    next_node = n
    for u, v, w in edges:
        ru, rv = uf.find(int(u)), uf.find(int(v))
        a, b = node_of_root[ru], node_of_root[rv]
        children[next_node] = (int(a), int(b), float(w))
        size[next_node] = size[a] + size[b]
        r = uf.union(ru, rv)
        node_of_root[r] = next_node
        next_node += 1

    def leaves_under(node: int) -> list[int]:
        out, stack = [], [node]
        while stack:
            x = stack.pop()
            if x < n:
                out.append(x)
            else:
                a, b, _ = children[x]
                stack.extend((b, a))
        return out

    # condensed tree
    root_node = 2 * n - 2
    point_rows: list[tuple[int, int, float]] = []      # (cluster, point, lambda)
    cluster_rows: list[tuple[int, int, float, int]] = []  # (parent, child, lambda, size)
    birth = [0.0]
    parent_of = [-1]
    stack = [(root_node, 0)]
    while stack:
        node, cond = stack.pop()
        a, b, dist = children[node]
        lam = 1.0 / max(dist, 1e-12)
        big = []
        for child in (a, b):
            if size[child] >= min_cluster_size:
                big.append(child)
            else:
                for p in leaves_under(child):
                    point_rows.append((cond, p, lam))
        if len(big) == 2:
            # a real split: both sides survive as their own clusters
            for child in big:
                cid = len(birth)
                birth.append(lam)
                parent_of.append(cond)
                cluster_rows.append((cond, cid, lam, int(size[child])))
                stack.append((child, cid))
        elif big:
            stack.append((big[0], cond))  # same cluster continues

    n_cond = len(birth)
    stability = np.zeros(n_cond)
    for cond, _, lam in point_rows:
        if np.isfinite(lam):
            stability[cond] += lam - birth[cond]
    for parent, _, lam, sz in cluster_rows:
        stability[parent] += sz * (lam - birth[parent])

    kids: list[list[int]] = [[] for _ in range(n_cond)]
    for parent, child, _, _ in cluster_rows:
        kids[parent].append(child)

    selected = np.zeros(n_cond, dtype=bool)
    subtree_score = np.zeros(n_cond)
    for c in range(n_cond - 1, -1, -1):
        child_total = sum(subtree_score[k] for k in kids[c])
        if c == 0 and n_cond > 1:
            subtree_score[c] = child_total  # root never competes
            continue
        if not kids[c] or stability[c] >= child_total:
            selected[c] = True
            subtree_score[c] = stability[c]
            sweep = list(kids[c])
            while sweep:
                k = sweep.pop()
                selected[k] = False
                sweep.extend(kids[k])
        else:
            subtree_score[c] = child_total

    owner = np.full(n_cond, -1, dtype=np.int64)
    for c in range(n_cond):
        if selected[c]:
            owner[c] = c
        elif parent_of[c] >= 0:
            owner[c] = owner[parent_of[c]]  # parents precede children

    labels = np.full(n, -1, dtype=np.int64)
    for cond, p, _ in point_rows:
        labels[p] = owner[cond]

    chosen = np.flatnonzero(selected)
    if chosen.size == 0:
        return ClusterLabeling(np.full(n, -1, dtype=np.int64), 0)
    first_member = {int(c): int(np.flatnonzero(labels == c).min())
                    for c in chosen if np.any(labels == c)}
    final = np.full(n, -1, dtype=np.int64)
    for rank, c in enumerate(sorted(first_member, key=first_member.get)):
        final[labels == c] = rank
    return ClusterLabeling(final, len(first_member))
