"""Benchmark configuration: versioned TOML schema with strict key checking.

Sections map one-to-one onto the library modules (plant overrides, MPC
weights and horizon, LQR ball, NN architecture and training budget, hybrid
dispatch parameters, bench repeats). Unknown keys are errors so config
drift fails loudly instead of being silently ignored.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

SCHEMA_VERSION = 1

# section -> key -> (type check, required)
_SCHEMA = {
    "run": {
        "plant": str,
        "variant": str,
        "seed": int,
        "x0": list,
        "max_steps": int,
        "tol": float,
    },
    "plant": None,  # free-form numeric overrides, validated against the builder
    "mpc": {
        "horizon": int,
        "q_diag": list,
        "r_diag": list,
        "state_box_lower": list,
        "state_box_upper": list,
        "terminal_ball_radius": float,
    },
    "lqr": {
        "roa_radius": float,
        "validate_samples": int,
        "validate_horizon": int,
    },
    "nn": {
        "layer_sizes": list,
        "hidden": int,  # sweep shorthand: replace every hidden width
        "dataset_size": int,
        "sampling_lower": list,
        "sampling_upper": list,
        "epochs": int,
        "batch_size": int,
        "learning_rate": float,
        "adam_beta1": float,
        "adam_beta2": float,
        "adam_eps": float,
    },
    "hybrid": {
        "n_lqr": int,
        "i_d": int,
        "wp_radius": float,
        "n_wp": int,
        "erosion_delta": float,
    },
    "bench": {
        "repeats": int,
        "lookup_pts_per_dim": int,
        "lookup_lower": list,
        "lookup_upper": list,
    },
}

_DEFAULTS = {
    "run": {"seed": 0, "max_steps": 600, "tol": 0.01},
    "plant": {},
    "mpc": {},
    "lqr": {"validate_samples": 200, "validate_horizon": 200},
    "nn": {
        "epochs": 300, "batch_size": 256, "learning_rate": 1e-3,
        "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_eps": 1e-8,
    },
    "hybrid": {"i_d": 1, "wp_radius": 0.0, "n_wp": 0, "erosion_delta": 0.0},
    "bench": {"repeats": 50, "lookup_pts_per_dim": 0},
}

_REQUIRED = {
    "run": ("plant", "variant", "x0"),
    "mpc": ("horizon", "q_diag", "r_diag"),
    "lqr": ("roa_radius",),
    "nn": ("layer_sizes", "dataset_size", "sampling_lower", "sampling_upper"),
    "hybrid": ("n_lqr",),
}


class ConfigError(Exception):
    pass


def _coerce(section: str, key: str, value, expected):
    if expected is float and isinstance(value, int):
        return float(value)
    if not isinstance(value, expected):
        raise ConfigError(
            f"[{section}].{key}: expected {expected.__name__}, got {type(value).__name__}"
        )
    return value


def validate_config(raw: dict) -> dict:
    """Check schema version, sections, keys and types; apply defaults."""
    if "schema_version" not in raw:
        raise ConfigError("missing schema_version")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"schema_version {raw['schema_version']} unsupported (want {SCHEMA_VERSION})"
        )
    cfg = {}
    for section, content in raw.items():
        if section == "schema_version":
            continue
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        if _SCHEMA[section] is None:
            if not isinstance(content, dict):
                raise ConfigError(f"[{section}] must be a table")
            cfg[section] = dict(content)
            continue
        out = {}
        for key, value in content.items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key [{section}].{key}")
            out[key] = _coerce(section, key, value, _SCHEMA[section][key])
        cfg[section] = out
    for section, defaults in _DEFAULTS.items():
        cfg.setdefault(section, {})
        for key, value in defaults.items():
            cfg[section].setdefault(key, value)
    for section, keys in _REQUIRED.items():
        for key in keys:
            if key not in cfg.get(section, {}):
                raise ConfigError(f"missing required key [{section}].{key}")
    if cfg["run"]["variant"] == "way_point":
        if cfg["hybrid"]["wp_radius"] <= 0 or cfg["hybrid"]["n_wp"] < 1:
            raise ConfigError("way_point variant requires [hybrid].wp_radius > 0 and n_wp >= 1")
    return cfg


def load_config(path) -> dict:
    """Load and validate a TOML config (or a manifest JSON holding one)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        manifest = json.loads(path.read_text())
        if "config" not in manifest:
            raise ConfigError("manifest JSON has no 'config' entry")
        raw = manifest["config"]
        raw.setdefault("schema_version", SCHEMA_VERSION)
        return validate_config(raw)
    with open(path, "rb") as f:
        raw = tomllib.load(f)
    return validate_config(raw)


def apply_override(cfg: dict, dotted: str, value: str) -> dict:
    """Apply a 'section.key=value' override with type coercion; for sweeps."""
    try:
        section, key = dotted.split(".", 1)
    except ValueError:
        raise ConfigError(f"override '{dotted}' is not of the form section.key") from None
    if section not in _SCHEMA or (_SCHEMA[section] is not None and key not in _SCHEMA[section]):
        raise ConfigError(f"unknown override target [{section}].{key}")
    out = {s: dict(v) for s, v in cfg.items()}
    expected = _SCHEMA[section][key] if _SCHEMA[section] is not None else None
    if expected is list:
        items = value.split(";")
        parsed = [int(v) if v.strip().lstrip("+-").isdigit() else float(v) for v in items]
    elif expected is int:
        parsed = int(value)
    elif expected is float:
        parsed = float(value)
    else:
        parsed = value
    out.setdefault(section, {})[key] = parsed
    return out
