"""RANSAC ground-plane detection and removal."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .clustering import ParameterError
from .geometry import PointCloud

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GroundParams:
    """RANSAC settings for the ground plane.

    The plane must be near-horizontal: its normal may tilt at most
    `max_angle_deg` from vertical. Candidate planes come from `iterations`
    random point triples drawn with the given seed, so removal is
    deterministic for a fixed cloud.
    """

    dist_threshold: float = 0.15
    max_angle_deg: float = 15.0
    iterations: int = 100
    min_inlier_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if self.dist_threshold <= 0:
            raise ParameterError("dist_threshold must be positive")
        if not 0 < self.max_angle_deg < 90:
            raise ParameterError("max_angle_deg must be in (0, 90)")
        if self.iterations < 1:
            raise ParameterError("iterations must be at least 1")
        if not 0 < self.min_inlier_fraction <= 1:
            raise ParameterError("min_inlier_fraction must be in (0, 1]")


@dataclass(frozen=True)
class GroundResult:
    """Outcome of ground removal.

    `cloud` has ground inliers dropped when `found`, otherwise it is the
    input unchanged. `kept_mask` marks surviving points of the input.
    `plane` is (a, b, c, d) with unit normal and a*x + b*y + c*z + d = 0.
    """

    cloud: PointCloud
    kept_mask: np.ndarray
    plane: np.ndarray | None
    found: bool


def _fit_plane_lsq(pts: np.ndarray) -> np.ndarray:
    centroid = pts.mean(axis=0)
    cov = np.cov((pts - centroid).T)
    _, vecs = np.linalg.eigh(cov)
    normal = vecs[:, 0]
    if normal[2] < 0:
        normal = -normal
    return np.append(normal, -normal @ centroid)


def remove_ground(cloud: PointCloud,
                  params: GroundParams = GroundParams()) -> GroundResult:
    """Strip near-horizontal ground-plane inliers from a cloud.

    When no acceptable plane reaches `min_inlier_fraction` support, the
    cloud passes through unchanged with `found=False` (a cloud with no
    ground is not an error).
    """
    pts = cloud.xyz
    n = len(pts)
    all_kept = np.ones(n, dtype=bool)
    if n < 3:
        return GroundResult(cloud, all_kept, None, False)

    rng = np.random.default_rng(params.seed)
    tri = rng.integers(0, n, size=(params.iterations, 3))
    p0, p1, p2 = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
    normals = np.cross(p1 - p0, p2 - p0)
    norms = np.linalg.norm(normals, axis=1)
    ok = norms > 1e-12
    min_nz = math.cos(math.radians(params.max_angle_deg))
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = normals / norms[:, None]
    ok &= np.abs(unit[:, 2]) >= min_nz
    if not ok.any():
        return GroundResult(cloud, all_kept, None, False)

    unit = unit[ok]
    offs = -(unit * p0[ok]).sum(axis=1)
    # distances of every point to every candidate plane
    dist = np.abs(pts @ unit.T + offs)
    inlier_counts = (dist <= params.dist_threshold).sum(axis=0)
    best = int(np.argmax(inlier_counts))
    if inlier_counts[best] < params.min_inlier_fraction * n:
        log.debug("ground plane support %.3f below threshold",
                  inlier_counts[best] / n)
        return GroundResult(cloud, all_kept, None, False)

    plane = np.append(unit[best], offs[best])
    inliers = dist[:, best] <= params.dist_threshold
    refined = _fit_plane_lsq(pts[inliers])
    if abs(refined[2]) >= min_nz:  # keep the refit only if it stays horizontal
        plane = refined
    kept = np.abs(pts @ plane[:3] + plane[3]) > params.dist_threshold
    return GroundResult(cloud.select(kept), kept, plane, True)
