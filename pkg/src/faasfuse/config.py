"""Platform configuration, loadable from a flat ``key = value`` file."""

from __future__ import annotations

import shlex
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .core import InternalAddressSet
from .errors import ConfigError


def default_runtime_cmd() -> list[str]:
    return [sys.executable, "-m", "faasfuse.runtime"]


@dataclass
class PlatformConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 0  # 0 = ephemeral
    internal_set: list[str] = field(default_factory=lambda: ["127.0.0.0/8"])
    health_timeout_ms: int = 5000
    health_poll_ms: int = 50
    drain_timeout_ms: int = 10000
    proxy_timeout_ms: int = 120000
    fusion_threshold: int = 1  # detections per instance pair before a merge queues
    merger_enabled: bool = True
    sandbox_backend: str = "process"
    runtime_cmd: list[str] = field(default_factory=default_runtime_cmd)
    state_dir: str | None = None  # None = fresh temp dir per platform

    def internal_addresses(self) -> InternalAddressSet:
        return InternalAddressSet(self.internal_set)

    @classmethod
    def from_file(cls, path: str | Path) -> "PlatformConfig":
        values: dict[str, object] = {}
        known = {f.name: f for f in fields(cls)}
        for lineno, raw in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, value, lineno, path)
        return cls(**values)


def _parse_value(key: str, value: str, lineno: int, path) -> object:
    try:
        if key in ("listen_port", "health_timeout_ms", "health_poll_ms",
                   "drain_timeout_ms", "proxy_timeout_ms", "fusion_threshold"):
            return int(value)
        if key == "merger_enabled":
            lowered = value.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return lowered in ("true", "1", "yes")
        if key == "internal_set":
            return [part.strip() for part in value.split(",") if part.strip()]
        if key == "runtime_cmd":
            return shlex.split(value)
        return value
    except ValueError as exc:
        raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
