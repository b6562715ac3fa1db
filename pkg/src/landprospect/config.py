"""Run configuration: one TOML file with a top-level ``seed`` and namespaced tables."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigError

SECTIONS = ("scenario", "features", "gis", "mlp", "glm", "compare")


def load_config(path) -> dict:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except FileNotFoundError as exc:
        raise ConfigError(f"{p}: config file not found") from exc
    try:
        cfg = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    unknown = set(cfg) - set(SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"{p}: unknown top-level keys {sorted(unknown)}")
    return cfg


def require_seed(cfg: dict, override=None) -> int:
    if override is not None:
        return int(override)
    if "seed" not in cfg:
        raise ConfigError("config has no top-level 'seed' key")
    seed = cfg["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    return seed


def section(cfg: dict, name: str, defaults: dict) -> dict:
    """Merge a config table over ``defaults``; unknown keys are an error."""
    given = cfg.get(name, {})
    if not isinstance(given, dict):
        raise ConfigError(f"[{name}] must be a table")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"[{name}] unknown keys {sorted(unknown)}; expected {sorted(defaults)}")
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(given))
    return out


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()
