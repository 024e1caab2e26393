"""Pipeline configuration: INI file plus per-stage defaults.

Every known key has a type and a default; unknown sections or keys are
rejected loudly rather than ignored, so a typo cannot silently fall back to a
default. Command-line flags override file values, which override defaults.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .classes import DEFAULT_CLASS_COUNTS
from .errors import ConfigError

# section -> key -> (type tag, default). Type tags: int, float, bool, str.
_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "pipeline": {
        "seed": ("int", 0),
        "workspace": ("str", ""),
    },
    "ingest": {
        "image_column": ("str", "image"),
        "caption_column": ("str", "captions"),
        "class_column": ("str", ""),
        "id_column": ("str", ""),
        "holdout": ("int", 500),
        "caption_policy": ("str", "first"),
        "resize_side": ("int", 224),
        "augment": ("bool", False),
    },
    "finetune": {
        "epochs": ("int", 5),
        "batch_size": ("int", 4),
        "learning_rate": ("float", 1e-6),
        "grad_accum_steps": ("int", 4),
        "mixed_precision": ("bool", True),
        "checkpoint_interval_steps": ("int", 500),
    },
    "prompts": {
        "template_id": ("str", "default"),
        "context_k": ("int", 3),
        "min_chars": ("int", 500),
        "test_fraction": ("float", 0.05),
        "index_chunk_size": ("int", 256),
        "embedder_dim": ("int", 64),
    },
    "generate": {
        "counts": ("str", ""),
        "steps": ("int", 50),
        "scheduler": ("str", "PNDM"),
        "width": ("int", 512),
        "height": ("int", 512),
    },
    "fid": {
        "sample_size": ("int", 250),
        "runs": ("int", 4),
    },
    "downstream": {
        "learning_rate": ("float", 3e-4),
        "epochs": ("int", 20),
        "batch_size": ("int", 16),
        "crop_side": ("int", 224),
        "split": ("str", "0.7,0.15,0.15"),
    },
}

_BOOL_VALUES = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


@dataclass
class PipelineConfig:
    """Fully resolved configuration: one dict per stage section."""

    sections: dict[str, dict[str, object]] = field(default_factory=dict)

    def __post_init__(self):
        resolved = {s: {k: spec[1] for k, spec in keys.items()} for s, keys in _SCHEMA.items()}
        for section, values in self.sections.items():
            if section not in resolved:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in values.items():
                if key not in resolved[section]:
                    raise ConfigError(f"unknown config key {key!r} in section [{section}]")
                resolved[section][key] = value
        self.sections = resolved

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.sections[section]

    def set(self, section: str, key: str, value: object) -> None:
        if section not in _SCHEMA or key not in _SCHEMA[section]:
            raise ConfigError(f"unknown config key [{section}] {key!r}")
        self.sections[section][key] = value

    def config_hash(self) -> str:
        payload = json.dumps(self.sections, sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _parse_value(section: str, key: str, raw: str) -> object:
    kind = _SCHEMA[section][key][0]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() not in _BOOL_VALUES:
                raise ValueError(f"not a boolean: {raw!r}")
            return _BOOL_VALUES[raw.lower()]
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {exc}") from exc


def load_config(path: Path | str | None = None) -> PipelineConfig:
    """Parse an INI config file; None means all defaults."""
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    sections: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}] in {path}")
        sections[section] = {}
        for key, raw in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {key!r} in section [{section}] of {path}")
            sections[section][key] = _parse_value(section, key, raw)
    return PipelineConfig(sections=sections)


def parse_counts(raw: str) -> dict[str, int]:
    """Parse 'Class Name:count,Other:count' into a counts map; empty means the default set."""
    raw = raw.strip()
    if not raw:
        return dict(DEFAULT_CLASS_COUNTS)
    counts: dict[str, int] = {}
    for part in raw.split(","):
        if ":" not in part:
            raise ConfigError(f"bad counts entry {part!r}; expected 'Class Name:count'")
        name, _, num = part.partition(":")
        name = name.strip()
        try:
            value = int(num.strip())
        except ValueError as exc:
            raise ConfigError(f"bad count for {name!r}: {num.strip()!r}") from exc
        if not name or value < 0:
            raise ConfigError(f"bad counts entry {part!r}")
        counts[name] = value
    return counts


def parse_fractions(raw: str) -> tuple[float, float, float]:
    """Parse 'train,val,test' fractions."""
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"expected three comma-separated fractions, got {raw!r}")
    try:
        f = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"bad fractions {raw!r}: {exc}") from exc
    return f  # validated downstream against sum/sign constraints
