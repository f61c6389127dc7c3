# src/dmoe/config.py
"""
Experiment configuration files.

A config file is YAML whose top level maps dotted keys to values:

    task.generator: gaussian_mixture
    layout.n_bins: 64
    grid.layout.bin_distribution: [uniform, normal]

Nested mappings are accepted and equivalent. Keys under ``grid.`` are grid
axes; everything else is unflattened into ``ExperimentConfig``.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import yaml
from pydantic import ValidationError

from .errors import ConfigError, ConfigNotFoundError, ConfigValidationError
from .schema import ExperimentConfig
from .utils import fs_utils

GRID_PREFIX = "grid."


# ------------------------
# Dotted keys
# ------------------------


def _set_path(data: Dict[str, Any], dotted: str, value: Any) -> None:
    if dotted.startswith(GRID_PREFIX):
        data.setdefault("grid", {})[dotted[len(GRID_PREFIX) :]] = value
        return
    node = data
    *parents, leaf = dotted.split(".")
    for key in parents:
        child = node.setdefault(key, {})
        if not isinstance(child, dict):
            raise ConfigValidationError(f"{dotted}: {key} is a value, not a section")
        node = child
    if isinstance(node.get(leaf), dict) and not isinstance(value, dict):
        raise ConfigValidationError(f"{dotted}: cannot replace a section with a value")
    if isinstance(value, dict) and isinstance(node.get(leaf), dict):
        for k, v in value.items():
            _set_path(node, f"{leaf}.{k}", v)
        return
    node[leaf] = value


def unflatten(flat: Mapping[str, Any]) -> Dict[str, Any]:
    """Nest dotted keys; nested mappings merge with dotted ones."""
    data: Dict[str, Any] = {}
    for key, value in flat.items():
        if not isinstance(key, str) or not key:
            raise ConfigValidationError(f"config keys must be nonempty strings, got {key!r}")
        if key == "grid" and isinstance(value, dict):
            for axis, values in value.items():
                _set_path(data, f"{GRID_PREFIX}{axis}", values)
            continue
        _set_path(data, key, value)
    return data


def flatten(data: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    """Inverse of ``unflatten``: lists and scalars are leaves."""
    out: Dict[str, Any] = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict) and value:
            out.update(flatten(value, dotted + "."))
        elif isinstance(value, dict):
            continue
        else:
            out[dotted] = value
    return out


def parse_override(text: str) -> Tuple[str, Any]:
    """``key=value`` with the value read as YAML (``[1, 2]``, ``true``, ``0.5``)."""
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    try:
        return key, yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigValidationError(f"invalid value for {key}: {e}") from e


def _validation_messages(e: ValidationError) -> List[str]:
    return [
        f"{'.'.join(map(str, error.get('loc', [])))}: {error.get('msg')}" for error in e.errors()
    ]


def build_config(data: Mapping[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigValidationError("; ".join(_validation_messages(e))) from e


def with_values(cfg: ExperimentConfig, values: Mapping[str, Any]) -> ExperimentConfig:
    """Copy of ``cfg`` with dotted keys replaced, revalidated."""
    data = cfg.model_dump(mode="json")
    for key, value in values.items():
        _set_path(data, key, value)
    return build_config(data)


def fingerprint(cfg: ExperimentConfig) -> str:
    """Stable hash of everything that affects a single run."""
    payload = cfg.model_dump(mode="json", exclude={"grid", "run"})
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _has_field(dotted: str) -> bool:
    model: Any = ExperimentConfig
    for key in dotted.split("."):
        fields = getattr(model, "model_fields", None)
        if fields is None or key not in fields:
            return False
        annotation = fields[key].annotation
        # Optional[Section] -> Section
        args = [a for a in getattr(annotation, "__args__", ()) if a is not type(None)]
        model = args[0] if args and hasattr(args[0], "model_fields") else annotation
    return True


# ------------------------
# Manager
# ------------------------


class ConfigManager:
    """Reads, validates and writes experiment configs."""

    RESOLVED_NAME = "config.resolved.yaml"

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path).resolve() if path is not None else None

    # ------------------------
    # Basic ops
    # ------------------------

    def exists(self) -> bool:
        return self.path is not None and self.path.exists()

    def load_mapping(self) -> Dict[str, Any]:
        """Raw (flat or nested) mapping from the file; {} without a file."""
        if self.path is None:
            return {}
        if not self.exists():
            raise ConfigNotFoundError(f"Config not found at {self.path}")
        try:
            data = yaml.safe_load(self.path.read_text(encoding="utf-8"))
        except yaml.YAMLError as e:
            raise ConfigValidationError(f"Invalid YAML in config: {e}") from e
        if data is None:
            return {}
        if not isinstance(data, dict):
            raise ConfigValidationError("config top level must be a mapping")
        return data

    def read(self, overrides: Sequence[str] = ()) -> ExperimentConfig:
        """File values, then ``key=value`` overrides, validated."""
        data = unflatten(self.load_mapping())
        for text in overrides:
            key, value = parse_override(text)
            _set_path(data, key, value)
        cfg = build_config(data)
        errors = self.validate(cfg)
        if errors:
            raise ConfigValidationError(f"Validation errors: {errors}")
        return cfg

    def validate(self, cfg: ExperimentConfig) -> List[str]:
        """Business rules beyond field types, as a list of messages."""
        errs: List[str] = []
        try:
            ExperimentConfig.model_validate(cfg.model_dump())
        except ValidationError as e:
            errs.extend(_validation_messages(e))

        for axis, values in cfg.grid.items():
            if not _has_field(axis):
                errs.append(f"grid axis {axis!r} does not name a config field")
                continue
            for value in values:
                try:
                    with_values(cfg, {axis: value})
                except ConfigValidationError as e:
                    errs.append(f"grid axis {axis!r} value {value!r}: {e}")
        return errs

    def write(self, cfg: ExperimentConfig, path: Optional[Path] = None) -> Path:
        """Atomically write ``cfg`` as flat dotted YAML."""
        errors = self.validate(cfg)
        if errors:
            raise ConfigValidationError(f"Validation errors: {errors}")
        target = Path(path) if path is not None else self.path
        if target is None:
            raise ConfigError("no path to write the config to")
        fs_utils.atomic_write_text(target, dump_config(cfg))
        return target


def dump_config(cfg: ExperimentConfig) -> str:
    data = cfg.model_dump(mode="json", exclude_none=True)
    grid = data.pop("grid", {})
    flat = flatten(data)
    flat.update({f"{GRID_PREFIX}{k}": v for k, v in grid.items()})
    return yaml.safe_dump(flat, default_flow_style=None, sort_keys=False, allow_unicode=True)


def load_config(path: Optional[Path], overrides: Iterable[str] = ()) -> ExperimentConfig:
    return ConfigManager(path).read(list(overrides))
