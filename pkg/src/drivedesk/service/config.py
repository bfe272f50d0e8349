"""Service configuration with layered precedence.

Values resolve as: explicit CLI flag > environment variable (prefix
``DRIVEDESK_``) > JSON config file > built-in default.  All sources feed
one frozen ServiceConfig so the rest of the service never re-reads the
environment.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields

from ..errors import InvalidParams, IoError

ENV_PREFIX = "DRIVEDESK_"


@dataclass(frozen=True)
class ServiceConfig:
    """Everything serve() needs; paths may be absent for a bare service."""

    host: str = "127.0.0.1"
    port: int = 8735
    data_dir: str = "./drivedesk-data"
    dataset_path: str | None = None
    checkpoint_path: str | None = None
    latents_path: str | None = None
    workers: int = 2

    def __post_init__(self) -> None:
        if not isinstance(self.port, int) or not (0 <= self.port <= 65535):
            raise InvalidParams(f"port must be an integer in [0, 65535], got {self.port!r}")
        if not isinstance(self.workers, int) or self.workers < 1:
            raise InvalidParams(f"workers must be a positive integer, got {self.workers!r}")
        if not self.data_dir or not isinstance(self.data_dir, str):
            raise InvalidParams("data_dir must be a non-empty path string")


_INT_FIELDS = {"port", "workers"}
_FIELD_NAMES = tuple(f.name for f in fields(ServiceConfig))


def _coerce(name: str, value):
    if value is None:
        return None
    if name in _INT_FIELDS:
        try:
            return int(value)
        except (TypeError, ValueError):
            raise InvalidParams(f"config value {name!r} must be an integer, got {value!r}")
    if not isinstance(value, str):
        raise InvalidParams(f"config value {name!r} must be a string, got {value!r}")
    return value


def _read_config_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidParams(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidParams(f"config file {path} must hold a JSON object")
    unknown = sorted(set(data) - set(_FIELD_NAMES))
    if unknown:
        raise InvalidParams(f"unknown config file keys: {', '.join(unknown)}")
    return data


def load_config(
    cli: dict | None = None,
    env: dict | None = None,
    config_path: str | None = None,
) -> ServiceConfig:
    """Merge the three override layers onto the defaults.

    ``cli`` entries with value None are treated as "flag not given".
    ``env`` defaults to os.environ; only keys DRIVEDESK_<FIELD> apply.
    """
    merged: dict = {}
    if config_path is not None:
        for key, value in _read_config_file(config_path).items():
            merged[key] = _coerce(key, value)
    env_map = os.environ if env is None else env
    for name in _FIELD_NAMES:
        raw = env_map.get(ENV_PREFIX + name.upper())
        if raw is not None:
            merged[name] = _coerce(name, raw)
    for key, value in (cli or {}).items():
        if key not in _FIELD_NAMES:
            raise InvalidParams(f"unknown config option {key!r}")
        if value is not None:
            merged[key] = _coerce(key, value)
    return ServiceConfig(**merged)
