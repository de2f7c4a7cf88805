"""Object discovery: temporal and spatial aggregation, multi-scale
clustering, box fitting, and dimension filtering."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .clustering import ParameterError, dbscan, scale_points
from .geometry import (BoundingBox, DegenerateInputError, PointCloud,
                       fit_box_lshape)
from .ground import GroundParams, remove_ground
from .parallel import parallel_map
from .registration import FlowConfig, apply_flow, estimate_scene_flow

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DimLimits:
    """Closed [min, max] intervals for plausible vehicle dimensions."""

    length: tuple[float, float] = (2.0, 15.0)
    width: tuple[float, float] = (1.0, 4.0)
    height: tuple[float, float] = (1.0, 4.5)

    def __post_init__(self) -> None:
        for lo, hi in (self.length, self.width, self.height):
            if not (0 < lo < hi):
                raise ParameterError("dimension limits need 0 < min < max")

    def contains(self, box: BoundingBox) -> bool:
        return (self.length[0] <= box.l <= self.length[1]
                and self.width[0] <= box.w <= self.width[1]
                and self.height[0] <= box.h <= self.height[1])


@dataclass(frozen=True)
class DiscoveryConfig:
    scales: tuple[float, ...] = (1.0, 0.7, 0.5)
    eps: float = 0.7
    min_pts: int = 5
    history_frames: int = 2
    detection_range: float = 50.0
    center: tuple[float, float] = (0.0, 0.0)
    lshape_grid_deg: float = 1.0
    dim_limits: DimLimits = field(default_factory=DimLimits)
    ground: GroundParams = field(default_factory=GroundParams)
    flow: FlowConfig = field(default_factory=FlowConfig)

    def __post_init__(self) -> None:
        scales = tuple(float(s) for s in self.scales)
        object.__setattr__(self, "scales", scales)
        if not scales or scales[0] != 1.0:
            raise ParameterError("scales must start at 1.0")
        if any(not 0 < s <= 1 for s in scales):
            raise ParameterError("scales must lie in (0, 1]")
        if any(a <= b for a, b in zip(scales, scales[1:])):
            raise ParameterError("scales must be strictly descending")
        if self.eps <= 0 or self.min_pts < 1:
            raise ParameterError("eps must be positive and min_pts >= 1")
        if self.history_frames < 0:
            raise ParameterError("history_frames must be >= 0")
        if self.detection_range <= 0:
            raise ParameterError("detection_range must be positive")


@dataclass(frozen=True)
class FrameBundle:
    """The cloud at timestep t plus k earlier clouds, all in world frame."""

    current: PointCloud
    history: tuple[PointCloud, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "history", tuple(self.history))
        for h in self.history:
            if h.timestamp == self.current.timestamp:
                raise ParameterError("history timestamps must differ from current")

    @property
    def k(self) -> int:
        return len(self.history)


def merge_rsu_clouds(clouds: Sequence[PointCloud]) -> PointCloud:
    """Concatenate same-timestep clouds from different sensors."""
    if not clouds:
        raise ParameterError("merge_rsu_clouds needs at least one cloud")
    t0 = clouds[0].timestamp
    for c in clouds[1:]:
        if not math.isclose(c.timestamp, t0, abs_tol=1e-9):
            raise ParameterError(
                f"timestamp mismatch: {c.timestamp} vs {t0}")
    xyz = np.concatenate([c.xyz for c in clouds])
    sids = np.concatenate([c.sensor_ids for c in clouds])
    return PointCloud(xyz, t0, sids)


def aggregate_frames(bundle: FrameBundle, flow_cfg: FlowConfig = FlowConfig(),
                     threads: int = 1) -> PointCloud:
    """Flow-compensate each history cloud onto the current one and union.

    A history frame whose flow estimation fails is skipped with a warning;
    with no failures the output holds every input point exactly once.
    """
    if bundle.k == 0:
        return bundle.current

    def shift(hist: PointCloud) -> PointCloud | None:
        try:
            flow = estimate_scene_flow(hist, bundle.current, flow_cfg, threads)
            return apply_flow(hist, flow)
        except Exception:  # noqa: BLE001 - one bad frame must not kill the rest
            log.warning("scene flow failed for frame %.6f; skipping it",
                        hist.timestamp, exc_info=True)
            return None

    moved = [m for m in parallel_map(shift, bundle.history) if m is not None]
    parts = [bundle.current, *moved]
    xyz = np.concatenate([p.xyz for p in parts])
    sids = np.concatenate([p.sensor_ids for p in parts])
    return PointCloud(xyz, bundle.current.timestamp, sids)


def filter_by_dimension(boxes: Sequence[BoundingBox],
                        dim_limits: DimLimits) -> list[BoundingBox]:
    """Keep boxes whose l, w, h all fall inside the (closed) limits."""
    return [b for b in boxes if dim_limits.contains(b)]


def discover(bundle: FrameBundle, cfg: DiscoveryConfig = DiscoveryConfig(),
             threads: int = 1) -> list[BoundingBox]:
    """Find vehicle boxes in one frame bundle.

    Aggregates history via scene flow, strips the ground plane, then runs
    the descending multi-scale loop: cluster the scaled working cloud,
    fit a box to each cluster (in original coordinates), and remove the
    cluster's points before the next scale. Boxes outside the dimension
    limits or the detection range are dropped at the end. Velocities are
    zero; tracking assigns them later.
    """
    merged = aggregate_frames(bundle, cfg.flow, threads)
    g = remove_ground(merged, cfg.ground)
    if not g.found and len(merged) >= 3:
        log.warning("no ground plane found at %.6f; clustering everything",
                    merged.timestamp)
    working = g.cloud.xyz

    boxes: list[BoundingBox] = []
    for s in cfg.scales:
        if len(working) == 0:
            break
        labeling = dbscan(scale_points(working, s), cfg.eps, cfg.min_pts)
        if labeling.cluster_count == 0:
            continue
        for cid in range(labeling.cluster_count):
            cluster = working[labeling.labels == cid]
            try:
                boxes.append(fit_box_lshape(cluster, cfg.lshape_grid_deg))
            except DegenerateInputError:
                log.debug("skipped degenerate %d-point cluster at scale %.2f",
                          len(cluster), s)
        working = working[labeling.labels == -1]

    kept = filter_by_dimension(boxes, cfg.dim_limits)
    cx, cy = cfg.center
    return [b for b in kept
            if math.hypot(b.cx - cx, b.cy - cy) <= cfg.detection_range]
