"""Run configuration: one nested structure holding every stage default,
serializable to JSON so a run is reproducible from a single file."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_type_hints

from .discovery import DiscoveryConfig
from .refinement import RefineConfig
from .tracking import TrackingConfig


class ConfigError(ValueError):
    """Unknown key, malformed document, or a value a stage rejects."""


@dataclass(frozen=True)
class PipelineConfig:
    """Everything a run needs beyond its input paths.

    `preset` names a simulation scenario for runs that generate their own
    data; it stays empty when the data comes from an existing manifest.
    CLI flags override `seed` and `threads`.
    """

    preset: str = ""
    seed: int = 0
    threads: int = 1
    iou_thresh: float = 0.3
    discovery: DiscoveryConfig = field(default_factory=DiscoveryConfig)
    tracking: TrackingConfig = field(default_factory=TrackingConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)

    def __post_init__(self) -> None:
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if not 0 < self.iou_thresh < 1:
            raise ConfigError("iou_thresh must be in (0, 1)")


def _to_jsonable(value: Any) -> Any:
    if dataclasses.is_dataclass(value):
        return {f.name: _to_jsonable(getattr(value, f.name))
                for f in dataclasses.fields(value)}
    if isinstance(value, tuple):
        return [_to_jsonable(v) for v in value]
    return value


def _as_tuple(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_as_tuple(v) for v in value)
    return value


def _from_mapping(cls: type, data: Any, path: str) -> Any:
    """Build dataclass `cls` from a dict, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, "
                          f"got {type(data).__name__}")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in names:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown config key: {where}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            sub = f"{path}.{f.name}" if path else f.name
            kwargs[f.name] = _from_mapping(hint, value, sub)
        else:
            kwargs[f.name] = _as_tuple(value)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        where = path or cls.__name__
        raise ConfigError(f"{where}: {e}") from e


def config_to_dict(cfg: PipelineConfig) -> dict[str, Any]:
    return _to_jsonable(cfg)


def config_from_dict(data: dict[str, Any]) -> PipelineConfig:
    return _from_mapping(PipelineConfig, data, "")


def save_config(path: str | Path, cfg: PipelineConfig) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2) + "\n")


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    return config_from_dict(doc)
