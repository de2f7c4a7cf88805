"""Automatic 3D box labeling for multi-sensor roadside LiDAR sequences."""

from .config import ConfigError, PipelineConfig, load_config, save_config
from .dataio import (LabelFile, LabeledBox, SequenceManifest, read_cloud,
                     read_labels, read_manifest, write_cloud, write_labels,
                     write_manifest)
from .discovery import DiscoveryConfig, FrameBundle, discover
from .evaluation import EvalReport, compute_report
from .geometry import BoundingBox, PointCloud, RigidTransform, bev_iou
from .pipeline import run_pipeline
from .refinement import RefineConfig, refine_tracklet
from .simulator import SimConfig, fixture_library, simulate
from .tracking import Tracklet, TrackingConfig, track_sequence

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "ConfigError", "DiscoveryConfig", "EvalReport",
    "FrameBundle", "LabelFile", "LabeledBox", "PipelineConfig", "PointCloud",
    "RefineConfig", "RigidTransform", "SequenceManifest", "SimConfig",
    "Tracklet", "TrackingConfig", "bev_iou", "compute_report", "discover",
    "fixture_library", "load_config", "read_cloud", "read_labels",
    "read_manifest", "refine_tracklet", "run_pipeline", "save_config",
    "simulate", "track_sequence", "write_cloud", "write_labels",
    "write_manifest",
]
