"""Rigid registration (ICP), optimal assignment, and cluster scene flow."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .clustering import ParameterError, hdbscan
from .geometry import PointCloud, RigidTransform, as_points
from .ground import GroundParams, remove_ground
from .parallel import parallel_map

log = logging.getLogger(__name__)

# sentinel cost for pairings that must never be assigned
FORBIDDEN_COST = 1e6


@dataclass(frozen=True)
class IcpParams:
    max_iter: int = 30
    corr_dist: float = 1.0
    tol: float = 1e-4

    def __post_init__(self) -> None:
        if self.max_iter < 1:
            raise ParameterError("max_iter must be at least 1")
        if self.corr_dist <= 0:
            raise ParameterError("corr_dist must be positive")
        if self.tol <= 0:
            raise ParameterError("tol must be positive")


@dataclass(frozen=True)
class IcpResult:
    """`transform` maps source points onto the target frame.

    `inlier_ratio` is the fraction of source points whose nearest target
    neighbor lies within `corr_dist` after alignment. `converged` means the
    last iteration's incremental motion fell below tolerance on
    well-conditioned correspondences; degenerate geometry (collinear
    correspondences) yields a best-effort result with `converged=False`.
    """

    transform: RigidTransform
    inlier_ratio: float
    iterations: int
    converged: bool


def _kabsch(src: np.ndarray, dst: np.ndarray):
    """Least-squares rotation and translation from paired points."""
    src_mean = src.mean(axis=0)
    dst_mean = dst.mean(axis=0)
    h = (src - src_mean).T @ (dst - dst_mean)
    u, s, vt = np.linalg.svd(h)
    d = float(np.sign(np.linalg.det(vt.T @ u.T))) or 1.0
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = dst_mean - r @ src_mean
    degenerate = s[1] <= 1e-9 * max(s[0], 1e-12)
    return r, t, degenerate


def icp(source: np.ndarray, target: np.ndarray,
        init: RigidTransform | None = None,
        params: IcpParams = IcpParams()) -> IcpResult:
    """Point-to-point iterative closest point.

    Correspondences are nearest neighbors within `corr_dist` (strict <).
    Each sweep solves the least-squares rigid motion and composes it onto
    the running transform until the incremental step (translation norm or
    rotation deviation from identity, whichever is larger) drops below
    `tol` or `max_iter` is reached.
    """
    src = as_points(source)
    dst = as_points(target)
    if len(src) == 0 or len(dst) == 0:
        raise ParameterError("icp requires non-empty source and target")
    t = init if init is not None else RigidTransform.identity()
    tree = cKDTree(dst)
    converged = False
    iterations = 0
    for iterations in range(1, params.max_iter + 1):
        cur = t.apply(src)
        dists, nn = tree.query(cur)
        m = dists < params.corr_dist
        if int(m.sum()) < 3:
            log.debug("icp starved of correspondences at iteration %d", iterations)
            break
        r, tv, degenerate = _kabsch(cur[m], dst[nn[m]])
        t = RigidTransform.from_rotation_translation(r, tv) @ t
        if degenerate:
            log.debug("icp hit degenerate correspondence geometry")
            break
        step = max(float(np.linalg.norm(tv)),
                   float(np.linalg.norm(r - np.eye(3))))
        if step < params.tol:
            converged = True
            break
    dists, _ = tree.query(t.apply(src))
    ratio = float((dists < params.corr_dist).mean())
    return IcpResult(t, ratio, iterations, converged)


def hungarian(cost: np.ndarray,
              reject_above: float | None = None) -> list[tuple[int, int]]:
    """Minimum-cost assignment on a rectangular cost matrix.

    Returns (row, col) pairs sorted by row. With `reject_above`, pairs
    whose cost exceeds it are dropped from the solution afterwards; to
    forbid a pairing from influencing the solve, set its cost to a
    sentinel far above every real cost (see `FORBIDDEN_COST`).
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ParameterError("cost must be a 2D matrix")
    if c.size == 0:
        return []
    if not np.all(np.isfinite(c)):
        raise ParameterError("cost matrix entries must be finite")
    rows, cols = linear_sum_assignment(c)
    pairs = sorted((int(r), int(k)) for r, k in zip(rows, cols))
    if reject_above is not None:
        pairs = [(r, k) for r, k in pairs if c[r, k] <= reject_above]
    return pairs


@dataclass(frozen=True)
class FlowField:
    """Per-point displacement vectors aligned with a source cloud."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "vectors", as_points(self.vectors))


@dataclass(frozen=True)
class FlowConfig:
    """Scene-flow estimation settings.

    Ground inliers are excluded before clustering (they would otherwise
    density-connect every object into one component) and always carry zero
    flow, like cluster noise. Cluster pairs whose centroids sit further
    apart than `centroid_gate` meters are never matched; accepted matches
    need an ICP cost (1 - inlier ratio) of at most `cost_reject`.
    """

    min_cluster_size: int = 10
    centroid_gate: float = 10.0
    cost_reject: float = 0.7
    exclude_ground: bool = True
    icp: IcpParams = field(default_factory=IcpParams)
    ground: GroundParams = field(default_factory=GroundParams)

    def __post_init__(self) -> None:
        if self.centroid_gate <= 0:
            raise ParameterError("centroid_gate must be positive")
        if not 0 <= self.cost_reject <= 1:
            raise ParameterError("cost_reject must be in [0, 1]")


def estimate_scene_flow(src: PointCloud, dst: PointCloud,
                        cfg: FlowConfig = FlowConfig(),
                        threads: int = 1) -> FlowField:
    """Per-point rigid flow from `src` toward `dst`.

    Both clouds are clustered (HDBSCAN over non-ground points); clusters
    are matched by Hungarian assignment on ICP fitness within the centroid
    gate, and each matched source cluster moves by its pair's rigid
    transform. Unmatched clusters, noise, and ground points get zero flow.
    """
    flow = np.zeros((len(src), 3))
    if len(src) == 0 or len(dst) == 0:
        return FlowField(flow)

    if cfg.exclude_ground:
        src_mask = remove_ground(src, cfg.ground).kept_mask
        dst_mask = remove_ground(dst, cfg.ground).kept_mask
    else:
        src_mask = np.ones(len(src), dtype=bool)
        dst_mask = np.ones(len(dst), dtype=bool)
    src_idx = np.flatnonzero(src_mask)
    src_pts = src.xyz[src_idx]
    dst_pts = dst.xyz[dst_mask]
    if len(src_pts) < cfg.min_cluster_size or len(dst_pts) < cfg.min_cluster_size:
        return FlowField(flow)

    sl = hdbscan(src_pts, cfg.min_cluster_size)
    dl = hdbscan(dst_pts, cfg.min_cluster_size)
    if sl.cluster_count == 0 or dl.cluster_count == 0:
        return FlowField(flow)

    src_clusters = [src_pts[sl.labels == i] for i in range(sl.cluster_count)]
    dst_clusters = [dst_pts[dl.labels == j] for j in range(dl.cluster_count)]
    src_cent = np.array([c.mean(axis=0) for c in src_clusters])
    dst_cent = np.array([c.mean(axis=0) for c in dst_clusters])
    gap = np.linalg.norm(src_cent[:, None, :] - dst_cent[None, :, :], axis=2)
    tasks = [(i, j) for i in range(len(src_clusters))
             for j in range(len(dst_clusters)) if gap[i, j] <= cfg.centroid_gate]

    def pair_fit(task: tuple[int, int]):
        i, j = task
        shift = dst_cent[j] - src_cent[i]
        init = RigidTransform.from_yaw_translation(0.0, *shift)
        res = icp(src_clusters[i], dst_clusters[j], init, cfg.icp)
        return 1.0 - res.inlier_ratio, res.transform

    fits = parallel_map(pair_fit, tasks, threads)
    cost = np.full((len(src_clusters), len(dst_clusters)), FORBIDDEN_COST)
    transforms: dict[tuple[int, int], RigidTransform] = {}
    for (i, j), (c, t) in zip(tasks, fits):
        cost[i, j] = c
        transforms[(i, j)] = t

    for i, j in hungarian(cost, reject_above=cfg.cost_reject):
        member = src_idx[sl.labels == i]
        moved = transforms[(i, j)].apply(src.xyz[member])
        flow[member] = moved - src.xyz[member]
    return FlowField(flow)


def apply_flow(cloud: PointCloud, flow: FlowField) -> PointCloud:
    """Translate every point by its flow vector (timestamp unchanged)."""
    if len(flow.vectors) != len(cloud):
        raise ParameterError("flow field does not align with the cloud")
    return PointCloud(cloud.xyz + flow.vectors, cloud.timestamp, cloud.sensor_ids)
