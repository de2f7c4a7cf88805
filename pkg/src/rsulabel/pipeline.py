"""File-to-file pipeline stages.

Every stage reads its inputs from disk and writes its outputs to disk, so
each one is independently re-runnable and the combined run is exactly the
chain of the individual stages. Frame-level work fans out through
`parallel_map`; results are identical for any thread count.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig
from .dataio import (DataFormatError, FrameRecord, LabelFile, LabeledBox,
                     RsuRecord, SequenceManifest, read_cloud, read_labels,
                     read_manifest, write_cloud, write_labels, write_manifest,
                     write_report)
from .discovery import FrameBundle, discover, merge_rsu_clouds
from .evaluation import EvalReport, compute_report
from .geometry import PointCloud, points_in_box
from .ground import remove_ground
from .parallel import parallel_map
from .refinement import refine_tracklet
from .registration import estimate_scene_flow
from .simulator import (SimConfig, fixture_library,
                        partial_visibility_config,
                        random_intersection_config, simulate)
from .tracking import (Tracklet, TrackletInstance, filter_short_tracklets,
                       track_sequence)

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
GT_NAME = "gt.labels"


def preset_config(name: str, seed: int | None = None) -> SimConfig:
    """Resolve a scene preset; `seed` re-seeds it when given."""
    if name == "partial_visibility":
        return partial_visibility_config(seed or 0)
    if name == "random_intersection":
        return random_intersection_config(seed or 0)
    library = fixture_library()
    if name not in library:
        known = ", ".join([*library, "random_intersection"])
        raise ConfigError(f"unknown preset {name!r}; known presets: {known}")
    cfg = library[name]
    return cfg if seed is None else replace(cfg, seed=seed)


def run_simulate(sim_cfg: SimConfig, out_dir: str | Path,
                 sequence_id: str) -> tuple[Path, Path]:
    """Render a scene to a dataset directory.

    Writes one cloud file per frame and sensor, the manifest, and the
    ground-truth label file; returns (manifest path, labels path).
    On-disk timesteps are rounded to the 6-decimal label precision.
    """
    out_dir = Path(out_dir)
    (out_dir / "clouds").mkdir(parents=True, exist_ok=True)
    out = simulate(sim_cfg)

    frames = []
    for f, per_rsu in enumerate(out.clouds):
        t = round(f * out.frame_dt, 6)
        paths = []
        for r, cloud in enumerate(per_rsu):
            rel = f"clouds/frame{f:04d}_rsu{r}.cloud"
            write_cloud(out_dir / rel, cloud)
            paths.append(rel)
        frames.append(FrameRecord(t, tuple(paths)))
    rsus = tuple(RsuRecord(i, s.x, s.y, s.height)
                 for i, s in enumerate(sim_cfg.rsus))
    manifest_path = out_dir / MANIFEST_NAME
    write_manifest(manifest_path,
                   SequenceManifest(sequence_id, rsus, tuple(frames)))

    gt_frames = []
    for f, rec in enumerate(frames):
        alive = [i for i, v in enumerate(sim_cfg.vehicles)
                 if v.alive(f, sim_cfg.duration)]
        boxes = tuple(LabeledBox(box, vid, "ground_truth")
                      for vid, box in zip(alive, out.gt[f]))
        gt_frames.append((rec.timestep, boxes))
    gt_path = out_dir / GT_NAME
    write_labels(gt_path, LabelFile(sequence_id, tuple(gt_frames)))
    return manifest_path, gt_path


def _merged_frames(manifest: SequenceManifest) -> list[PointCloud]:
    return [merge_rsu_clouds(manifest.load_frame(i))
            for i in range(len(manifest.frames))]


def _member_clouds(merged: list[PointCloud],
                   cfg: PipelineConfig) -> list[PointCloud]:
    # member points are cut from the ground-stripped single-frame clouds
    return [remove_ground(m, cfg.discovery.ground).cloud for m in merged]


def _check_sequence(a: str, b: str, what: str) -> None:
    if a != b:
        raise ConfigError(f"sequence id mismatch: {what} ({a!r} vs {b!r})")


def _check_time_axis(labels: LabelFile, manifest: SequenceManifest) -> None:
    ours = [round(t, 6) for t, _ in labels.frames]
    theirs = [round(f.timestep, 6) for f in manifest.frames]
    if ours != theirs:
        raise ConfigError("label file and manifest cover different frames")


def run_discover(manifest_path: str | Path, cfg: PipelineConfig,
                 out_path: str | Path, threads: int = 1) -> Path:
    """Detect boxes per frame bundle and write a discovered label file."""
    manifest = read_manifest(manifest_path)
    merged = _merged_frames(manifest)
    k = cfg.discovery.history_frames

    def one(f: int):
        bundle = FrameBundle(merged[f], tuple(merged[max(0, f - k):f]))
        return discover(bundle, cfg.discovery)

    per_frame = parallel_map(one, range(len(merged)), threads)
    frames = tuple(
        (manifest.frames[f].timestep,
         tuple(LabeledBox(b, None, "discovered") for b in per_frame[f]))
        for f in range(len(merged)))
    out_path = Path(out_path)
    write_labels(out_path, LabelFile(manifest.sequence_id, frames))
    return out_path


def run_track(labels_path: str | Path, manifest_path: str | Path,
              cfg: PipelineConfig, out_path: str | Path) -> Path:
    """Link detections into tracks and write a tracked label file.

    Tracklets shorter than `tracking.min_instances` are dropped here, so
    downstream refinement only sees tracks long enough to aggregate.
    """
    dets = read_labels(labels_path)
    manifest = read_manifest(manifest_path)
    _check_sequence(dets.sequence_id, manifest.sequence_id,
                    "detections vs manifest")
    _check_time_axis(dets, manifest)

    member = _member_clouds(_merged_frames(manifest), cfg)
    frames = [(t, [lb.box for lb in boxes]) for t, boxes in dets.frames]
    tracklets = track_sequence(frames, clouds=member, cfg=cfg.tracking)
    tracklets = filter_short_tracklets(tracklets, cfg.tracking.min_instances)

    by_frame: dict[float, list[LabeledBox]] = {t: [] for t, _ in dets.frames}
    for tk in tracklets:
        for inst in tk.instances:
            by_frame[inst.timestep].append(
                LabeledBox(inst.box, tk.track_id, "tracked"))
    out_frames = tuple((t, tuple(by_frame[t])) for t, _ in dets.frames)
    out_path = Path(out_path)
    write_labels(out_path, LabelFile(dets.sequence_id, out_frames))
    return out_path


def run_refine(labels_path: str | Path, manifest_path: str | Path,
               cfg: PipelineConfig, out_path: str | Path,
               threads: int = 1) -> Path:
    """Refine each track's boxes and write a refined label file.

    Member points are re-cut from the ground-stripped clouds with the
    tracking margin, reproducing the sets the tracker attached.
    """
    tracked = read_labels(labels_path)
    manifest = read_manifest(manifest_path)
    _check_sequence(tracked.sequence_id, manifest.sequence_id,
                    "tracks vs manifest")
    _check_time_axis(tracked, manifest)

    member = _member_clouds(_merged_frames(manifest), cfg)
    groups: dict[int, list[TrackletInstance]] = {}
    for f_idx, (t, boxes) in enumerate(tracked.frames):
        for lb in boxes:
            if lb.track_id is None:
                raise DataFormatError(
                    f"{labels_path}: refinement input needs a track id on "
                    f"every box")
            pts = points_in_box(member[f_idx].xyz, lb.box,
                                cfg.tracking.point_margin)
            groups.setdefault(lb.track_id, []).append(
                TrackletInstance(t, lb.box, pts))
    tracklets = [Tracklet(tid, tuple(insts))
                 for tid, insts in sorted(groups.items())]

    refined = parallel_map(lambda tk: refine_tracklet(tk, cfg.refine)[0],
                           tracklets, threads)

    by_frame: dict[float, list[LabeledBox]] = {t: [] for t, _ in tracked.frames}
    for tk in refined:
        for inst in tk.instances:
            by_frame[inst.timestep].append(
                LabeledBox(inst.box, tk.track_id, "refined"))
    out_frames = tuple((t, tuple(by_frame[t])) for t, _ in tracked.frames)
    out_path = Path(out_path)
    write_labels(out_path, LabelFile(tracked.sequence_id, out_frames))
    return out_path


def run_eval(labels_path: str | Path, gt_path: str | Path, iou_thresh: float,
             out_path: str | Path | None = None) -> tuple[EvalReport, str]:
    """Score a label file against ground truth; optionally write a report."""
    dets = read_labels(labels_path)
    gts = read_labels(gt_path)
    _check_sequence(dets.sequence_id, gts.sequence_id,
                    "labels vs ground truth")
    report = compute_report(dets.frame_boxes(), gts.frame_boxes(), iou_thresh,
                            include_velocity=True)
    if out_path is not None:
        write_report(out_path, report, dets.sequence_id, iou_thresh)
    return report, dets.sequence_id


def run_flow(src_path: str | Path, dst_path: str | Path, cfg: PipelineConfig,
             threads: int = 1) -> dict[str, float]:
    """Estimate scene flow between two cloud files and summarize it."""
    src = read_cloud(src_path, 0.0)
    dst = read_cloud(dst_path, 1.0)
    flow = estimate_scene_flow(src, dst, cfg.discovery.flow, threads)
    mag = np.linalg.norm(flow.vectors, axis=1)
    if len(mag) == 0:
        return {"points": 0, "mean_flow": 0.0, "max_flow": 0.0,
                "moving_fraction": 0.0}
    return {"points": len(mag),
            "mean_flow": float(mag.mean()),
            "max_flow": float(mag.max()),
            "moving_fraction": float((mag > 1e-6).mean())}


def run_pipeline(cfg: PipelineConfig, out_dir: str | Path,
                 manifest_path: str | Path | None = None,
                 gt_path: str | Path | None = None,
                 ) -> tuple[EvalReport, str]:
    """Full run: simulate or load, then discover, track, refine, eval.

    Each stage consumes the files the previous stage wrote, so the outputs
    are byte-identical to running the stages one at a time.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if manifest_path is None:
        if not cfg.preset:
            raise ConfigError("pipeline needs a preset or a manifest")
        manifest_path, gt_path = run_simulate(
            preset_config(cfg.preset, cfg.seed), out_dir / "dataset",
            cfg.preset)
    elif gt_path is None:
        raise ConfigError("running from a manifest needs --gt labels")

    discovered = run_discover(manifest_path, cfg, out_dir / "discovered.labels",
                              cfg.threads)
    tracked = run_track(discovered, manifest_path, cfg,
                        out_dir / "tracked.labels")
    refined = run_refine(tracked, manifest_path, cfg,
                         out_dir / "refined.labels", cfg.threads)
    return run_eval(refined, gt_path, cfg.iou_thresh, out_dir / "eval.txt")
