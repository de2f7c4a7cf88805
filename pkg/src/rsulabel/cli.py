"""Command-line surface: one subcommand per pipeline stage plus a
combined runner, sharing a config file whose values CLI flags override.

Exit codes: 0 success, 2 usage, 3 configuration, 4 unreadable data,
5 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from typing import Sequence

from .config import ConfigError, PipelineConfig, load_config
from .dataio import DataFormatError, format_report_table
from .pipeline import (preset_config, run_discover, run_eval, run_flow,
                       run_pipeline, run_refine, run_simulate, run_track)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_RUNTIME = 5


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", metavar="PATH",
                   help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--threads", type=int,
                   help="worker threads for frame-parallel stages")
    p.add_argument("--verbose", action="store_true",
                   help="debug logging on stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="rsulabel",
        description="Automatic 3D box labeling for roadside LiDAR "
                    "sequences: simulate, discover, track, refine, eval.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common],
                       help="render a scene preset to a dataset directory")
    p.add_argument("--preset", help="scene name (see `pipeline --help`)")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("flow", parents=[common],
                       help="estimate scene flow between two cloud files")
    p.add_argument("src", metavar="SRC.cloud")
    p.add_argument("dst", metavar="DST.cloud")

    p = sub.add_parser("discover", parents=[common],
                       help="detect vehicle boxes frame by frame")
    p.add_argument("--manifest", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH")

    p = sub.add_parser("track", parents=[common],
                       help="link detections into tracks")
    p.add_argument("--labels", required=True, metavar="PATH")
    p.add_argument("--manifest", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH")

    p = sub.add_parser("refine", parents=[common],
                       help="refine box dims and poses per track")
    p.add_argument("--labels", required=True, metavar="PATH")
    p.add_argument("--manifest", required=True, metavar="PATH")
    p.add_argument("--out", required=True, metavar="PATH")

    p = sub.add_parser("eval", parents=[common],
                       help="score labels against ground truth")
    p.add_argument("--labels", required=True, metavar="PATH")
    p.add_argument("--gt", required=True, metavar="PATH")
    p.add_argument("--iou", type=float, help="BEV IoU match threshold")
    p.add_argument("--out", metavar="PATH", help="also write a report file")

    p = sub.add_parser("pipeline", parents=[common],
                       help="simulate or load, then discover, track, "
                            "refine, and eval in one run")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--preset", help="scene to simulate")
    p.add_argument("--manifest", metavar="PATH",
                   help="run on recorded data instead of simulating")
    p.add_argument("--gt", metavar="PATH",
                   help="ground-truth labels for recorded data")
    p.add_argument("--iou", type=float, help="BEV IoU match threshold")
    return parser


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.threads is not None:
        updates["threads"] = args.threads
    if getattr(args, "preset", None):
        updates["preset"] = args.preset
    if getattr(args, "iou", None) is not None:
        updates["iou_thresh"] = args.iou
    try:
        return replace(cfg, **updates) if updates else cfg
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    if not cfg.preset:
        raise ConfigError("simulate needs --preset or a preset in the config")
    manifest, gt = run_simulate(preset_config(cfg.preset, cfg.seed),
                                args.out, cfg.preset)
    print(f"wrote {manifest} and {gt}")
    return EXIT_OK


def _cmd_flow(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    stats = run_flow(args.src, args.dst, cfg, cfg.threads)
    for key in ("points", "mean_flow", "max_flow", "moving_fraction"):
        v = stats[key]
        print(f"{key} {v}" if isinstance(v, int) else f"{key} {v:.6f}")
    return EXIT_OK


def _cmd_discover(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    print(f"wrote {run_discover(args.manifest, cfg, args.out, cfg.threads)}")
    return EXIT_OK


def _cmd_track(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    print(f"wrote {run_track(args.labels, args.manifest, cfg, args.out)}")
    return EXIT_OK


def _cmd_refine(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    print(f"wrote {run_refine(args.labels, args.manifest, cfg, args.out, cfg.threads)}")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    report, seq = run_eval(args.labels, args.gt, cfg.iou_thresh, args.out)
    print(format_report_table(report, seq, cfg.iou_thresh))
    return EXIT_OK


def _cmd_pipeline(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    report, seq = run_pipeline(cfg, args.out, args.manifest, args.gt)
    print(format_report_table(report, seq, cfg.iou_thresh))
    return EXIT_OK


_HANDLERS = {
    "simulate": _cmd_simulate,
    "flow": _cmd_flow,
    "discover": _cmd_discover,
    "track": _cmd_track,
    "refine": _cmd_refine,
    "eval": _cmd_eval,
    "pipeline": _cmd_pipeline,
}


def cli(argv: Sequence[str] | None = None) -> int:
    """Run one command; returns the process exit code instead of exiting."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 0 for --help and 2 for usage errors
        return int(e.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - map anything else to one code
        log.debug("unhandled failure", exc_info=True)
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    raise SystemExit(cli())


if __name__ == "__main__":
    main()
