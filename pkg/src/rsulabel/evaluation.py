"""Label-vs-ground-truth evaluation: recall/precision at a BEV IoU
threshold and nuScenes-style true-positive error metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .clustering import ParameterError
from .geometry import BoundingBox, bev_iou
from .registration import FORBIDDEN_COST, hungarian

FrameBoxes = tuple[float, Sequence[BoundingBox]]


def match_frame(dets: Sequence[BoundingBox], gts: Sequence[BoundingBox],
                iou_thresh: float) -> tuple[list[tuple[int, int]], list[int], list[int]]:
    """Optimal confidence-free matching of detections to ground truth.

    Pairs whose BEV IoU falls below `iou_thresh` are forbidden before the
    assignment solve, so the result is the maximum-cardinality matching
    with maximal total IoU. Returns (pairs, unmatched det indices,
    unmatched gt indices).
    """
    if not 0 < iou_thresh < 1:
        raise ParameterError("iou_thresh must be in (0, 1)")
    n_d, n_g = len(dets), len(gts)
    if n_d == 0 or n_g == 0:
        return [], list(range(n_d)), list(range(n_g))
    iou = np.array([[bev_iou(d, g) for g in gts] for d in dets])
    cost = np.where(iou >= iou_thresh, 1.0 - iou, FORBIDDEN_COST)
    pairs = hungarian(cost, reject_above=1.0)
    in_d = {i for i, _ in pairs}
    in_g = {j for _, j in pairs}
    return (pairs,
            [i for i in range(n_d) if i not in in_d],
            [j for j in range(n_g) if j not in in_g])


@dataclass(frozen=True)
class FrameStats:
    timestep: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class EvalReport:
    tp: int
    fp: int
    fn: int
    recall: float
    precision: float
    ate: float
    ase: float
    aoe: float
    frames: tuple[FrameStats, ...]
    ave: float | None = None


def translation_error(det: BoundingBox, gt: BoundingBox) -> float:
    return math.hypot(det.cx - gt.cx, det.cy - gt.cy)


def scale_error(det: BoundingBox, gt: BoundingBox) -> float:
    """1 - 3D IoU after aligning centers and yaw (only dims matter)."""
    inter = (min(det.l, gt.l) * min(det.w, gt.w) * min(det.h, gt.h))
    union = det.volume() + gt.volume() - inter
    return 1.0 - inter / union


def orientation_error(det: BoundingBox, gt: BoundingBox) -> float:
    """Absolute yaw difference modulo the box's 180-degree symmetry."""
    d = abs(det.theta - gt.theta) % math.pi
    return min(d, math.pi - d)


def velocity_error(det: BoundingBox, gt: BoundingBox) -> float:
    return math.hypot(det.vx - gt.vx, det.vy - gt.vy)


def _frame_key(t: float) -> float:
    # serialized timestamps carry 6 decimals; align on that grain
    return round(t, 6)


def compute_report(dets: Sequence[FrameBoxes], gts: Sequence[FrameBoxes],
                   iou_thresh: float = 0.3,
                   include_velocity: bool = False) -> EvalReport:
    """Aggregate match_frame over a sequence of (timestep, boxes) frames.

    Both inputs must cover the same timesteps in the same order. TP error
    means are over all matched pairs pooled across frames; they are 0.0
    when nothing matches.
    """
    if [_frame_key(t) for t, _ in dets] != [_frame_key(t) for t, _ in gts]:
        raise ParameterError("detection and ground-truth timesteps differ")

    tp = fp = fn = 0
    ate_sum = ase_sum = aoe_sum = ave_sum = 0.0
    frames = []
    for (t, frame_dets), (_, frame_gts) in zip(dets, gts):
        pairs, miss_d, miss_g = match_frame(frame_dets, frame_gts, iou_thresh)
        tp += len(pairs)
        fp += len(miss_d)
        fn += len(miss_g)
        frames.append(FrameStats(t, len(pairs), len(miss_d), len(miss_g)))
        for i, j in pairs:
            d, g = frame_dets[i], frame_gts[j]
            ate_sum += translation_error(d, g)
            ase_sum += scale_error(d, g)
            aoe_sum += orientation_error(d, g)
            if include_velocity:
                ave_sum += velocity_error(d, g)

    return EvalReport(
        tp=tp, fp=fp, fn=fn,
        recall=tp / (tp + fn) if tp + fn else 0.0,
        precision=tp / (tp + fp) if tp + fp else 0.0,
        ate=ate_sum / tp if tp else 0.0,
        ase=ase_sum / tp if tp else 0.0,
        aoe=aoe_sum / tp if tp else 0.0,
        frames=tuple(frames),
        ave=(ave_sum / tp if tp else 0.0) if include_velocity else None)
