"""On-disk formats: binary point clouds, line-text label files, JSON
sequence manifests, and evaluation reports."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import EvalReport, FrameStats
from .geometry import BoundingBox, PointCloud


class DataFormatError(ValueError):
    """A file exists but its contents violate the format contract."""


class BadMagicError(DataFormatError):
    pass


class UnsupportedVersionError(DataFormatError):
    pass


class TruncatedFileError(DataFormatError):
    pass


class CountMismatchError(DataFormatError):
    pass


class UnknownColumnError(DataFormatError):
    pass


class ManifestError(DataFormatError):
    pass


# ---------------------------------------------------------------------------
# point-cloud binary

CLOUD_MAGIC = b"RSULCLD\x00"
CLOUD_VERSION = 1
_HEADER = struct.Struct("<8sII")  # magic, version, point count


def write_cloud(path: str | Path, cloud: PointCloud) -> None:
    """Write xyz as little-endian float32 triples behind a counted header.

    Timestamp and sensor ids are manifest-level metadata and are not
    stored here.
    """
    xyz = np.ascontiguousarray(cloud.xyz, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CLOUD_MAGIC, CLOUD_VERSION, len(cloud)))
        fh.write(xyz.tobytes())


def read_cloud(path: str | Path, timestamp: float = 0.0,
               sensor_id: int = 0) -> PointCloud:
    """Read a cloud file; timestamp and sensor id come from the caller."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: shorter than the header")
    magic, version, count = _HEADER.unpack_from(raw)
    if magic != CLOUD_MAGIC:
        raise BadMagicError(f"{path}: magic {magic!r} is not {CLOUD_MAGIC!r}")
    if version != CLOUD_VERSION:
        raise UnsupportedVersionError(
            f"{path}: file version {version}, reader supports {CLOUD_VERSION}")
    payload = raw[_HEADER.size:]
    want = count * 12
    if len(payload) < want:
        raise TruncatedFileError(
            f"{path}: payload holds {len(payload)} bytes, header needs {want}")
    if len(payload) > want:
        raise CountMismatchError(
            f"{path}: {len(payload) - want} bytes beyond the declared "
            f"{count} points")
    xyz = np.frombuffer(payload, dtype="<f4").reshape(count, 3).astype(np.float64)
    ids = np.full(count, sensor_id, dtype=np.int32)
    return PointCloud(xyz, timestamp, ids)


# ---------------------------------------------------------------------------
# label files

LABEL_FORMAT = "rsulabel-labels"
LABEL_VERSION = 1
STAGES = ("discovered", "tracked", "refined", "ground_truth")
_COLUMNS = ("track_id", "cx", "cy", "cz", "w", "l", "h", "theta", "vx", "vy",
            "stage")


@dataclass(frozen=True)
class LabeledBox:
    """One output box: geometry plus its track id and producing stage."""

    box: BoundingBox
    track_id: int | None = None
    stage: str = "discovered"

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got "
                             f"{self.stage!r}")


@dataclass(frozen=True)
class LabelFile:
    """All labeled boxes of one sequence, grouped per frame.

    Frames with no boxes are kept: the frame list is the time axis the
    evaluator aligns on, not just a container for boxes.
    """

    sequence_id: str
    frames: tuple[tuple[float, tuple[LabeledBox, ...]], ...]

    def __post_init__(self) -> None:
        frames = tuple((float(t), tuple(boxes)) for t, boxes in self.frames)
        object.__setattr__(self, "frames", frames)
        if not self.sequence_id or any(c.isspace() for c in self.sequence_id):
            raise ValueError("sequence_id must be non-empty, no whitespace")
        ts = [t for t, _ in frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("frame timesteps must strictly increase")

    def frame_boxes(self) -> list[tuple[float, list[BoundingBox]]]:
        """(timestep, boxes) view in evaluator shape."""
        return [(t, [lb.box for lb in boxes]) for t, boxes in self.frames]


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def write_labels(path: str | Path, labels: LabelFile) -> None:
    """One frame block per timestep; numeric fields carry 6 decimals."""
    lines = [f"{LABEL_FORMAT} v{LABEL_VERSION}",
             f"sequence {labels.sequence_id}",
             "columns " + " ".join(_COLUMNS)]
    for t, boxes in labels.frames:
        lines.append(f"frame {_fmt(t)} {len(boxes)}")
        for lb in boxes:
            b = lb.box
            tid = "-" if lb.track_id is None else str(lb.track_id)
            nums = (b.cx, b.cy, b.cz, b.w, b.l, b.h, b.theta, b.vx, b.vy)
            lines.append(" ".join([tid, *map(_fmt, nums), lb.stage]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_labels(path: str | Path) -> LabelFile:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != LABEL_FORMAT:
        raise BadMagicError(f"{path}: not a {LABEL_FORMAT} file")
    if head[1] != f"v{LABEL_VERSION}":
        raise UnsupportedVersionError(
            f"{path}: file is {head[1]}, reader supports v{LABEL_VERSION}")
    if len(lines) < 3 or not lines[1].startswith("sequence "):
        raise DataFormatError(f"{path}: missing sequence line")
    sequence_id = lines[1].removeprefix("sequence ").strip()
    cols = tuple(lines[2].split()[1:]) if lines[2].startswith("columns ") else ()
    if cols != _COLUMNS:
        unknown = [c for c in cols if c not in _COLUMNS]
        if unknown:
            raise UnknownColumnError(
                f"{path}: unknown column {unknown[0]!r}")
        raise DataFormatError(f"{path}: columns must be exactly {_COLUMNS}")

    frames: list[tuple[float, tuple[LabeledBox, ...]]] = []
    i = 3
    while i < len(lines):
        parts = lines[i].split()
        if len(parts) != 3 or parts[0] != "frame":
            raise DataFormatError(f"{path}:{i + 1}: expected a frame line")
        t, count = float(parts[1]), int(parts[2])
        if i + count >= len(lines):
            raise TruncatedFileError(
                f"{path}: frame at {parts[1]} declares {count} boxes but "
                f"the file ends early")
        boxes = []
        for row in lines[i + 1:i + 1 + count]:
            f = row.split()
            if len(f) != len(_COLUMNS):
                raise DataFormatError(
                    f"{path}: box row has {len(f)} fields, "
                    f"expected {len(_COLUMNS)}")
            tid = None if f[0] == "-" else int(f[0])
            cx, cy, cz, w, l, h, theta, vx, vy = map(float, f[1:10])
            boxes.append(LabeledBox(
                BoundingBox(cx=cx, cy=cy, cz=cz, w=w, l=l, h=h, theta=theta,
                            vx=vx, vy=vy), tid, f[10]))
        frames.append((t, tuple(boxes)))
        i += 1 + count
    return LabelFile(sequence_id, tuple(frames))


# ---------------------------------------------------------------------------
# sequence manifests

MANIFEST_FORMAT = "rsulabel-manifest"
MANIFEST_VERSION = 1
UNITS = {"length": "meters", "time": "seconds"}


@dataclass(frozen=True)
class RsuRecord:
    rsu_id: int
    x: float
    y: float
    height: float


@dataclass(frozen=True)
class FrameRecord:
    """One capture instant: a timestep plus one cloud path per sensor."""

    timestep: float
    cloud_paths: tuple[str, ...]


@dataclass(frozen=True)
class SequenceManifest:
    """Index of a recorded sequence: sensors, frames, and cloud files.

    Cloud paths are relative to the manifest's own directory, one per
    registered sensor, in registry order.
    """

    sequence_id: str
    rsus: tuple[RsuRecord, ...]
    frames: tuple[FrameRecord, ...]
    root: Path = field(default=Path("."), compare=False)

    def __post_init__(self) -> None:
        ts = [f.timestep for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ManifestError("frame timesteps must strictly increase")
        for f in self.frames:
            if len(f.cloud_paths) != len(self.rsus):
                raise ManifestError(
                    f"frame {f.timestep} lists {len(f.cloud_paths)} clouds "
                    f"for {len(self.rsus)} sensors")

    def load_frame(self, index: int) -> list[PointCloud]:
        """Per-sensor clouds of one frame, stamped from the manifest."""
        rec = self.frames[index]
        return [read_cloud(self.root / p, rec.timestep, rsu.rsu_id)
                for rsu, p in zip(self.rsus, rec.cloud_paths)]


def write_manifest(path: str | Path, manifest: SequenceManifest) -> None:
    doc = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "sequence_id": manifest.sequence_id,
        "units": UNITS,
        "rsus": [{"id": r.rsu_id, "x": r.x, "y": r.y, "height": r.height}
                 for r in manifest.rsus],
        "frames": [{"timestep": f.timestep, "clouds": list(f.cloud_paths)}
                   for f in manifest.frames],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_manifest(path: str | Path) -> SequenceManifest:
    """Load and validate a manifest; referenced files must exist."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: not valid JSON ({e})") from e
    if doc.get("format") != MANIFEST_FORMAT:
        raise BadMagicError(f"{path}: not a {MANIFEST_FORMAT} file")
    if doc.get("version") != MANIFEST_VERSION:
        raise UnsupportedVersionError(
            f"{path}: manifest version {doc.get('version')}, reader "
            f"supports {MANIFEST_VERSION}")
    if doc.get("units") != UNITS:
        raise ManifestError(f"{path}: units must be {UNITS}")
    rsus = tuple(RsuRecord(r["id"], float(r["x"]), float(r["y"]),
                           float(r["height"])) for r in doc["rsus"])
    frames = tuple(FrameRecord(float(f["timestep"]), tuple(f["clouds"]))
                   for f in doc["frames"])
    manifest = SequenceManifest(doc["sequence_id"], rsus, frames,
                                root=path.parent)
    for f in manifest.frames:
        for p in f.cloud_paths:
            if not (manifest.root / p).is_file():
                raise ManifestError(f"{path}: referenced cloud {p} not found")
    return manifest


# ---------------------------------------------------------------------------
# evaluation reports

REPORT_FORMAT = "rsulabel-eval"
REPORT_VERSION = 1


def write_report(path: str | Path, report: EvalReport, sequence_id: str,
                 iou_thresh: float) -> None:
    lines = [f"{REPORT_FORMAT} v{REPORT_VERSION}",
             f"sequence {sequence_id}",
             f"iou_thresh {_fmt(iou_thresh)}",
             f"tp {report.tp}", f"fp {report.fp}", f"fn {report.fn}",
             f"recall {_fmt(report.recall)}",
             f"precision {_fmt(report.precision)}",
             f"ate {_fmt(report.ate)}", f"ase {_fmt(report.ase)}",
             f"aoe {_fmt(report.aoe)}",
             f"ave {'-' if report.ave is None else _fmt(report.ave)}"]
    for fs in report.frames:
        lines.append(f"frame {_fmt(fs.timestep)} {fs.tp} {fs.fp} {fs.fn}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path: str | Path) -> tuple[EvalReport, str, float]:
    """Inverse of write_report; returns (report, sequence_id, iou)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != f"{REPORT_FORMAT} v{REPORT_VERSION}":
        raise BadMagicError(f"{path}: not a {REPORT_FORMAT} "
                            f"v{REPORT_VERSION} file")
    kv: dict[str, str] = {}
    frames = []
    for line in lines[1:]:
        key, rest = line.split(maxsplit=1)
        if key == "frame":
            t, tp, fp, fn = rest.split()
            frames.append(FrameStats(float(t), int(tp), int(fp), int(fn)))
        else:
            kv[key] = rest
    report = EvalReport(
        tp=int(kv["tp"]), fp=int(kv["fp"]), fn=int(kv["fn"]),
        recall=float(kv["recall"]), precision=float(kv["precision"]),
        ate=float(kv["ate"]), ase=float(kv["ase"]), aoe=float(kv["aoe"]),
        frames=tuple(frames),
        ave=None if kv["ave"] == "-" else float(kv["ave"]))
    return report, kv["sequence"], float(kv["iou_thresh"])


def format_report_table(report: EvalReport, sequence_id: str,
                        iou_thresh: float) -> str:
    """Small fixed-width summary for terminal output."""
    rows = [("sequence", sequence_id),
            ("IoU threshold", f"{iou_thresh:.2f}"),
            ("TP / FP / FN", f"{report.tp} / {report.fp} / {report.fn}"),
            ("recall", f"{report.recall:.3f}"),
            ("precision", f"{report.precision:.3f}"),
            ("ATE [m]", f"{report.ate:.3f}"),
            ("ASE [1-IoU]", f"{report.ase:.3f}"),
            ("AOE [rad]", f"{report.aoe:.3f}")]
    if report.ave is not None:
        rows.append(("AVE [m/s]", f"{report.ave:.3f}"))
    width = max(len(k) for k, _ in rows)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)
