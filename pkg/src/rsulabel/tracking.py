"""Track-by-detection with a constant-velocity Kalman filter."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .clustering import ParameterError
from .geometry import BoundingBox, PointCloud, bev_iou, points_in_box, wrap_angle
from .registration import FORBIDDEN_COST, hungarian

# state layout: [cx, cy, cz, theta, l, w, h, vx, vy]
N_STATE = 9
N_MEAS = 7  # everything but velocity is observed


@dataclass(frozen=True)
class TrackingConfig:
    iou_gate: float = 0.1
    max_miss: int = 2
    min_hits: int = 1
    min_instances: int = 4
    point_margin: float = 0.1
    pos_var: float = 0.5
    yaw_var: float = 0.1
    dim_var: float = 0.05
    vel_var: float = 1.0
    init_vel_var: float = 100.0

    def __post_init__(self) -> None:
        if not 0 < self.iou_gate < 1:
            raise ParameterError("iou_gate must be in (0, 1)")
        if self.max_miss < 0 or self.min_hits < 1 or self.min_instances < 1:
            raise ParameterError("bad track management counts")
        for v in (self.pos_var, self.yaw_var, self.dim_var, self.vel_var,
                  self.init_vel_var):
            if v <= 0:
                raise ParameterError("noise variances must be positive")

    def process_noise(self) -> np.ndarray:
        return np.diag([self.pos_var] * 3 + [self.yaw_var] + [self.dim_var] * 3
                       + [self.vel_var] * 2)

    def measurement_noise(self) -> np.ndarray:
        return np.diag([self.pos_var] * 3 + [self.yaw_var] + [self.dim_var] * 3)


@dataclass(frozen=True)
class TrackState:
    """Kalman state of one track: mean `x` (9,), covariance `p` (9, 9)."""

    x: np.ndarray
    p: np.ndarray
    track_id: int
    hit_count: int = 1
    miss_count: int = 0

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=np.float64)
        p = np.asarray(self.p, dtype=np.float64)
        if x.shape != (N_STATE,) or p.shape != (N_STATE, N_STATE):
            raise ValueError("state must be (9,) with (9, 9) covariance")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)

    @staticmethod
    def from_box(box: BoundingBox, track_id: int,
                 cfg: TrackingConfig) -> "TrackState":
        x = np.array([box.cx, box.cy, box.cz, box.theta,
                      box.l, box.w, box.h, 0.0, 0.0])
        p = np.diag([cfg.pos_var] * 3 + [cfg.yaw_var] + [cfg.dim_var] * 3
                    + [cfg.init_vel_var] * 2)
        return TrackState(x, p, track_id)

    def box(self) -> BoundingBox:
        x = self.x
        return BoundingBox(cx=x[0], cy=x[1], cz=x[2], w=x[5], l=x[4], h=x[6],
                           theta=x[3], vx=x[7], vy=x[8])


def kf_predict(s: TrackState, dt: float,
               cfg: TrackingConfig = TrackingConfig()) -> TrackState:
    """Constant-velocity prediction over `dt` seconds."""
    if dt <= 0:
        raise ParameterError("dt must be positive")
    f = np.eye(N_STATE)
    f[0, 7] = dt
    f[1, 8] = dt
    x = f @ s.x
    p = f @ s.p @ f.T + cfg.process_noise()
    return replace(s, x=x, p=p)


def kf_update(s: TrackState, z: BoundingBox,
              cfg: TrackingConfig = TrackingConfig()) -> TrackState:
    """Measurement update from a detected box.

    The yaw innovation is wrapped into (-pi/2, pi/2]: boxes are
    heading-ambiguous, so a measurement flipped by 180 degrees corrects
    toward the nearer orientation instead of spinning the track.
    """
    h = np.zeros((N_MEAS, N_STATE))
    h[:, :N_MEAS] = np.eye(N_MEAS)
    meas = np.array([z.cx, z.cy, z.cz, z.theta, z.l, z.w, z.h])
    innov = meas - s.x[:N_MEAS]
    dth = wrap_angle(meas[3] - s.x[3])
    if dth > 0.5 * math.pi:
        dth -= math.pi
    elif dth <= -0.5 * math.pi:
        dth += math.pi
    innov[3] = dth

    s_mat = h @ s.p @ h.T + cfg.measurement_noise()
    gain = s.p @ h.T @ np.linalg.inv(s_mat)
    x = s.x + gain @ innov
    x[3] = wrap_angle(x[3])
    x[4:7] = np.maximum(x[4:7], 1e-3)  # dims stay positive
    p = (np.eye(N_STATE) - gain @ h) @ s.p
    p = 0.5 * (p + p.T)
    return replace(s, x=x, p=p, hit_count=s.hit_count + 1, miss_count=0)


def associate(predicted: Sequence[BoundingBox],
              detections: Sequence[BoundingBox],
              iou_gate: float) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Match predictions to detections by BEV IoU.

    Pairs under the gate are forbidden before the assignment solve, so the
    result is the maximum-cardinality matching with maximal total IoU.
    Returns (pairs, unmatched predicted indices, unmatched detection
    indices).
    """
    if not 0 < iou_gate < 1:
        raise ParameterError("iou_gate must be in (0, 1)")
    n_p, n_d = len(predicted), len(detections)
    if n_p == 0 or n_d == 0:
        return [], list(range(n_p)), list(range(n_d))
    iou = np.array([[bev_iou(p, d) for d in detections] for p in predicted])
    cost = np.where(iou >= iou_gate, 1.0 - iou, FORBIDDEN_COST)
    pairs = hungarian(cost, reject_above=1.0)
    in_p = {i for i, _ in pairs}
    in_d = {j for _, j in pairs}
    return (pairs,
            [i for i in range(n_p) if i not in in_p],
            [j for j in range(n_d) if j not in in_d])


@dataclass(frozen=True)
class TrackletInstance:
    """One tracklet element: the box at a timestep plus its member points."""

    timestep: float
    box: BoundingBox
    points: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        pts = self.points
        pts = np.zeros((0, 3)) if pts is None else np.asarray(pts, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("instance points must be (N, 3)")
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class Tracklet:
    track_id: int
    instances: tuple[TrackletInstance, ...]

    def __post_init__(self) -> None:
        inst = tuple(self.instances)
        object.__setattr__(self, "instances", inst)
        if not inst:
            raise ValueError("a tracklet needs at least one instance")
        ts = [i.timestep for i in inst]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("instance timesteps must strictly increase")

    def __len__(self) -> int:
        return len(self.instances)


class _LiveTrack:
    """Mutable bookkeeping for one track during a sequence pass."""

    def __init__(self, state: TrackState):
        self.state = state
        self.instances: list[TrackletInstance] = []

    def to_tracklet(self) -> Tracklet:
        return Tracklet(self.state.track_id, tuple(self.instances))


def _member_points(cloud: PointCloud | None, box: BoundingBox,
                   margin: float) -> np.ndarray:
    if cloud is None:
        return np.zeros((0, 3))
    return points_in_box(cloud.xyz, box, margin)


def track_sequence(frames: Sequence[tuple[float, Sequence[BoundingBox]]],
                   clouds: Sequence[PointCloud] | None = None,
                   cfg: TrackingConfig = TrackingConfig()) -> list[Tracklet]:
    """Run the tracker over time-ordered per-frame detections.

    `clouds` (optional, aligned with `frames`) supplies the per-frame
    points from which each instance's member set is cut; without clouds
    the instances carry empty point sets. Instances keep the detected box
    as measured; only the velocities come from the Kalman posterior. The
    filter itself drives prediction and association. Tracks missing for
    more than `max_miss` consecutive frames terminate.
    """
    ts = [t for t, _ in frames]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ParameterError("frames must be strictly time-ordered")
    if clouds is not None and len(clouds) != len(frames):
        raise ParameterError("clouds must align one-to-one with frames")

    active: list[_LiveTrack] = []
    done: list[_LiveTrack] = []
    next_id = 0
    prev_t: float | None = None
    for f_idx, (t, dets) in enumerate(frames):
        cloud = clouds[f_idx] if clouds is not None else None
        if prev_t is not None and active:
            dt = t - prev_t
            for tr in active:
                tr.state = kf_predict(tr.state, dt, cfg)
        predicted = [tr.state.box() for tr in active]
        pairs, unmatched_p, unmatched_d = associate(predicted, list(dets),
                                                    cfg.iou_gate)
        survivors: list[_LiveTrack] = []
        for i, j in pairs:
            tr = active[i]
            tr.state = kf_update(tr.state, dets[j], cfg)
            box = replace(dets[j], vx=float(tr.state.x[7]),
                          vy=float(tr.state.x[8]))
            tr.instances.append(
                TrackletInstance(t, box, _member_points(cloud, box,
                                                        cfg.point_margin)))
            survivors.append(tr)
        for i in unmatched_p:
            tr = active[i]
            tr.state = replace(tr.state, miss_count=tr.state.miss_count + 1)
            if tr.state.miss_count > cfg.max_miss:
                done.append(tr)
            else:
                survivors.append(tr)
        for j in unmatched_d:
            tr = _LiveTrack(TrackState.from_box(dets[j], next_id, cfg))
            next_id += 1
            tr.instances.append(
                TrackletInstance(t, dets[j], _member_points(cloud, dets[j],
                                                            cfg.point_margin)))
            survivors.append(tr)
        active = survivors
        prev_t = t

    done.extend(active)
    out = [tr.to_tracklet() for tr in done
           if tr.state.hit_count >= cfg.min_hits and tr.instances]
    out.sort(key=lambda tk: tk.track_id)
    return out


def filter_short_tracklets(tracklets: Sequence[Tracklet],
                           min_instances: int) -> list[Tracklet]:
    """Drop tracklets with fewer than `min_instances` instances."""
    if min_instances < 1:
        raise ParameterError("min_instances must be at least 1")
    return [t for t in tracklets if len(t) >= min_instances]
