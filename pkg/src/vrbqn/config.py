"""Run configuration files: schema, defaults, validation and overrides."""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema
import yaml

from .envs import SCENARIOS, EnvConfig
from .exceptions import ConfigurationError
from .trainer import TrainConfig

SCHEMA_VERSION = 1

_NUMBER = {"type": "number"}
_COUNT = {"type": "integer", "minimum": 0}
_POSITIVE = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "required": ["schema_version"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "scenario": {"enum": sorted(SCENARIOS)},
        "env": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "width": {"type": "integer", "minimum": 8},
                "height": {"type": "integer", "minimum": 8},
                "channels": {"enum": [1, 3]},
                "skip_frames": _POSITIVE,
                "stack": _POSITIVE,
                "timeout": {"type": ["integer", "null"], "minimum": 1},
                "seed": _COUNT,
            },
        },
        "layer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": ["string", "null"]},
                "n_neurons": _POSITIVE,
                "sigma_xy_range": {"type": "array", "items": _NUMBER, "minItems": 2, "maxItems": 2},
                "sigma_z": {"type": "number", "exclusiveMinimum": 0},
                "seed": _COUNT,
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "total_steps": _COUNT,
                "batch_size": _POSITIVE,
                "learning_rate": {"type": "number", "exclusiveMinimum": 0},
                "gamma": {"type": "number", "minimum": 0, "maximum": 1},
                "epsilon_schedule": {
                    "type": "array",
                    "items": [
                        {"type": "number", "minimum": 0, "maximum": 1},
                        {"type": "number", "minimum": 0, "maximum": 1},
                        _COUNT,
                        _COUNT,
                    ],
                    "minItems": 4,
                    "maxItems": 4,
                },
                "target_update_period": {"type": ["integer", "null"], "minimum": 1},
                "replay_capacity": _POSITIVE,
                "eval_episodes": _POSITIVE,
                "seeds": {"type": "array", "items": _COUNT, "minItems": 1},
            },
        },
    },
}

DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "scenario": "shooter",
    "env": {"width": 32, "height": 32, "channels": 1, "skip_frames": 6, "stack": 2, "timeout": None, "seed": 0},
    "layer": {"path": None, "n_neurons": 256, "sigma_xy_range": [0.02, 0.2], "sigma_z": 1.0, "seed": 0},
    "train": {
        "total_steps": 20_000,
        "batch_size": 256,
        "learning_rate": 0.01,
        "gamma": 0.99,
        "epsilon_schedule": [0.0, 0.0, 0, 0],
        "target_update_period": None,
        "replay_capacity": 100_000,
        "eval_episodes": 100,
        "seeds": [0],
    },
}


def _field(error) -> str:
    return ".".join(str(p) for p in error.absolute_path) or "<root>"


def _merge(base, extra):
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def apply_override(raw: dict, assignment: str) -> dict:
    """Apply ``section.key=value``; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigurationError(f"override {assignment!r} must look like section.key=value")
    dotted, text = assignment.split("=", 1)
    keys = dotted.split(".")
    node = raw
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"override {dotted!r}: {key!r} is not a section")
    node[keys[-1]] = yaml.safe_load(text)
    return raw


def validate(raw) -> dict:
    """Check ``raw`` against the schema and cross-field rules; return it with defaults filled."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a mapping")
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{_field(e)}: {e.message}" for e in errors]
        raise ConfigurationError("invalid config:\n  " + "\n  ".join(lines))
    cfg = _merge(DEFAULTS, raw)
    lo, hi = cfg["layer"]["sigma_xy_range"]
    if not 0 < lo < hi <= 1:
        raise ConfigurationError(
            f"layer.sigma_xy_range: range error, need 0 < low < high <= 1, got [{lo}, {hi}]"
        )
    start, end, *_ = cfg["train"]["epsilon_schedule"]
    if not (0 <= start <= 1 and 0 <= end <= 1):
        raise ConfigurationError("train.epsilon_schedule: epsilon values must lie in [0, 1]")
    return cfg


def load_config(path, overrides=()) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc
    raw = raw if raw is not None else {}
    for assignment in overrides:
        apply_override(raw, assignment)
    return validate(raw)


def env_config(cfg: dict) -> EnvConfig:
    return EnvConfig(**cfg["env"])


def train_config(cfg: dict) -> TrainConfig:
    t = dict(cfg["train"])
    t["epsilon_schedule"] = tuple(t["epsilon_schedule"])
    return TrainConfig(**t)
