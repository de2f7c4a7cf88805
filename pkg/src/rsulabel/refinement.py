"""Tracklet refinement: body-frame aggregation, dimension re-fit, and a
closed-form yaw+translation pose solve per instance."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (BoundingBox, DegenerateInputError, RigidTransform,
                       as_points, box_to_transform, fit_box_lshape, wrap_angle)
from .registration import IcpParams, icp
from .tracking import Tracklet, TrackletInstance

log = logging.getLogger(__name__)


class RefinementSkipped(Exception):
    """The tracklet cannot support refinement; it passes through unchanged."""


class UnderdeterminedError(ValueError):
    """Too little geometry to pin a pose (coincident or missing points)."""


@dataclass(frozen=True)
class RefineConfig:
    icp: IcpParams = field(default_factory=lambda: IcpParams(corr_dist=0.5))
    min_instance_points: int = 3
    lshape_grid_deg: float = 1.0

    def __post_init__(self) -> None:
        if self.min_instance_points < 3:
            raise ValueError("min_instance_points must be >= 3 (ICP needs 3)")
        if not 0 < self.lshape_grid_deg <= 90:
            raise ValueError("lshape_grid_deg must be in (0, 90]")


@dataclass
class CanonicalObject:
    """Body-frame reconstruction of one object across a tracklet.

    `points` is the ICP-aggregated body-frame set; `correspondences` pairs
    every instance's world points with their body-frame coordinates, in
    tracklet order. `dims` stays None until `refine_dimension` runs.
    """

    points: np.ndarray
    correspondences: list[tuple[float, np.ndarray, np.ndarray]]
    dims: tuple[float, float, float] | None = None


def to_body_frame(instance: BoundingBox, world_pts: np.ndarray) -> np.ndarray:
    """World points into the instance's box-centered, yaw-aligned frame."""
    return box_to_transform(instance).inverse().apply(world_pts)


def _heading_prior(instances, min_points: int) -> float:
    """Point-weighted circular mean of instance headings, mod pi.

    Small instances carry bad headings (sparse boxes flip or rotate), so
    the weighting lets the well-sampled views dominate.
    """
    biggest = max(len(inst.points) for inst in instances)
    floor = max(min_points, biggest // 4)
    s = c = 0.0
    for inst in instances:
        n = len(inst.points)
        if n >= floor:
            s += n * math.sin(2 * inst.box.theta)
            c += n * math.cos(2 * inst.box.theta)
    return 0.5 * math.atan2(s, c)


def aggregate_object(tracklet: Tracklet,
                     cfg: RefineConfig = RefineConfig()) -> CanonicalObject:
    """Union all instances' points in one body frame (largest first).

    Instances are visited in descending member-point order (ties: earlier
    timestep first) and ICP-aligned onto the running reconstruction before
    joining it. Box fits on poorly visible objects carry two kinds of
    gross error, and each gets its own ICP starts: a heading more than
    45 degrees off the track's heading prior means the fit swapped its
    long and short edges, so the join starts from quarter-turn rotations;
    a length deficit against the reference box means truncation, whose
    unknown sign adds fore and aft shifted starts. Every start is refined
    coarse-then-fine (half the correspondence gate), and the candidate
    with the best fine-gate inlier ratio wins. Only joins that settle
    well (inlier ratio >= 0.6) extend the matching target; every
    instance's points still enter the final aggregate exactly once, and
    instances below `min_instance_points` join as-is.
    """
    insts = tracklet.instances
    order = sorted(range(len(insts)),
                   key=lambda i: (-len(insts[i].points), insts[i].timestep))
    if len(insts[order[0]].points) < cfg.min_instance_points:
        raise RefinementSkipped(
            f"track {tracklet.track_id}: no instance has "
            f">= {cfg.min_instance_points} points")

    body = [to_body_frame(inst.box, inst.points) for inst in insts]
    aligned: list[np.ndarray | None] = [None] * len(body)
    ref = order[0]
    ref_l = insts[ref].box.l
    aligned[ref] = body[ref]
    target = body[ref]
    th_hat = _heading_prior(insts, cfg.min_instance_points)
    fine = replace(cfg.icp, corr_dist=cfg.icp.corr_dist / 2)

    for i in order[1:]:
        inst = insts[i]
        pts = body[i]
        if len(pts) >= cfg.min_instance_points:
            off = (inst.box.theta - th_hat + math.pi / 2) % math.pi - math.pi / 2
            yaws = (math.pi / 2, -math.pi / 2) if abs(off) > math.pi / 4 \
                else (0.0, 0.2, -0.2)
            shift = max(0.0, (ref_l - inst.box.l) / 2)
            txs = (0.0, shift, -shift) if shift > 0.3 else (0.0,)
            best = None
            for yaw in yaws:
                for tx in txs:
                    start = RigidTransform.from_yaw_translation(yaw, tx, 0.0)
                    res = icp(pts, target, init=start, params=cfg.icp)
                    res = icp(pts, target, init=res.transform, params=fine)
                    if best is None or res.inlier_ratio > best.inlier_ratio:
                        best = res
            pts = best.transform.apply(pts)
            if best.inlier_ratio >= 0.6:
                target = np.vstack([target, pts])
        aligned[i] = pts

    aggregate = np.vstack([a for a in aligned if a is not None and len(a)])
    corr = [(inst.timestep, inst.points, aligned[i])
            for i, inst in enumerate(insts)]
    return CanonicalObject(points=aggregate, correspondences=corr)


def refine_dimension(obj: CanonicalObject,
                     cfg: RefineConfig = RefineConfig()) -> tuple[float, float, float]:
    """Fit the aggregate and re-center the body frame on that fit.

    The canonical fit's pose is folded into the body coordinates (its yaw
    wrapped to (-pi/2, pi/2] so frames stay near the instances' heading
    convention); afterwards the body frame is box-centered, which is what
    the per-instance pose solve assumes. Returns the refined (l, w, h).
    """
    try:
        fit = fit_box_lshape(obj.points, cfg.lshape_grid_deg)
    except DegenerateInputError as e:
        raise RefinementSkipped(f"degenerate aggregate: {e}") from e
    yaw = fit.theta
    if yaw > 0.5 * math.pi:
        yaw -= math.pi
    elif yaw <= -0.5 * math.pi:
        yaw += math.pi
    recenter = RigidTransform.from_yaw_translation(yaw, fit.cx, fit.cy,
                                                   fit.cz).inverse()
    obj.points = recenter.apply(obj.points)
    obj.correspondences = [
        (t, world, recenter.apply(body) if len(body) else body)
        for t, world, body in obj.correspondences]
    obj.dims = (fit.l, fit.w, fit.h)
    return obj.dims


def refine_pose(world_pts: np.ndarray,
                body_pts: np.ndarray) -> tuple[float, float, float, float]:
    """Closed-form least-squares pose restricted to yaw plus translation.

    Solves argmin_T sum ||T^-1 w - o||^2 over poses T = (yaw, tx, ty, tz),
    equivalently sum ||w - T o||^2: yaw from the cross/dot sums of the
    centered xy pairs (planar Kabsch), xy translation from centroids, z
    translation from the mean height difference. Returns (cx, cy, cz,
    theta) of the body-to-world pose.
    """
    w = as_points(world_pts)
    o = as_points(body_pts)
    if len(w) != len(o):
        raise ValueError("correspondence lists must align")
    if len(w) < 2:
        raise UnderdeterminedError("need at least 2 correspondences")
    w_mean = w.mean(axis=0)
    o_mean = o.mean(axis=0)
    wc = w[:, :2] - w_mean[:2]
    oc = o[:, :2] - o_mean[:2]
    sdot = float((oc * wc).sum())
    scross = float((oc[:, 0] * wc[:, 1] - oc[:, 1] * wc[:, 0]).sum())
    if sdot * sdot + scross * scross < 1e-24:
        raise UnderdeterminedError("coincident correspondences cannot pin yaw")
    theta = math.atan2(scross, sdot)
    c, s = math.cos(theta), math.sin(theta)
    tx = w_mean[0] - (c * o_mean[0] - s * o_mean[1])
    ty = w_mean[1] - (s * o_mean[0] + c * o_mean[1])
    tz = w_mean[2] - o_mean[2]
    return tx, ty, tz, theta


def pose_objective(pose: tuple[float, float, float, float],
                   world_pts: np.ndarray, body_pts: np.ndarray) -> float:
    """Sum of squared residuals ||T^-1 w - o||^2 for a candidate pose."""
    cx, cy, cz, theta = pose
    t_inv = RigidTransform.from_yaw_translation(theta, cx, cy, cz).inverse()
    res = t_inv.apply(as_points(world_pts)) - as_points(body_pts)
    return float((res * res).sum())


def refine_tracklet(tracklet: Tracklet,
                    cfg: RefineConfig = RefineConfig()) -> tuple[Tracklet, bool]:
    """Refine one tracklet; returns (tracklet, refined flag).

    All instances share the refined dimensions; each gets its own solved
    pose (instances too small to solve keep their original pose).
    Velocities are re-derived from refined centers by finite differences
    (central in the interior, one-sided at the ends); single-instance
    tracklets keep their incoming velocity.
    """
    try:
        obj = aggregate_object(tracklet, cfg)
        l, w, h = refine_dimension(obj, cfg)
    except RefinementSkipped as e:
        log.debug("refinement skipped: %s", e)
        return tracklet, False

    poses: list[tuple[float, float, float, float]] = []
    for (t, world, body), inst in zip(obj.correspondences, tracklet.instances):
        try:
            poses.append(refine_pose(world, body))
        except UnderdeterminedError:
            b = inst.box
            poses.append((b.cx, b.cy, b.cz, b.theta))

    n = len(poses)
    ts = [inst.timestep for inst in tracklet.instances]
    velocities: list[tuple[float, float]] = []
    if n == 1:
        velocities.append((tracklet.instances[0].box.vx,
                           tracklet.instances[0].box.vy))
    else:
        for i in range(n):
            a = max(i - 1, 0)
            b = min(i + 1, n - 1)
            span = ts[b] - ts[a]
            velocities.append(((poses[b][0] - poses[a][0]) / span,
                               (poses[b][1] - poses[a][1]) / span))

    instances = []
    for inst, (cx, cy, cz, theta), (vx, vy) in zip(tracklet.instances, poses,
                                                   velocities):
        box = BoundingBox(cx=cx, cy=cy, cz=cz, w=w, l=l, h=h,
                          theta=wrap_angle(theta), vx=vx, vy=vy)
        instances.append(TrackletInstance(inst.timestep, box, inst.points))
    return Tracklet(tracklet.track_id, tuple(instances)), True
