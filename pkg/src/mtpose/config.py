"""Flat ``key = value`` configuration files.

Blank lines and lines starting with ``#`` are ignored. Values are parsed as
int, float, bool (true/false), None (none/null) or left as strings. Unknown
keys are rejected by the consumer, not here.
"""
from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def _value(raw: str):
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def parse_config(text: str) -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {n}: empty key")
        if key in out:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        out[key] = _value(raw)
    return out


def load_config(path) -> dict:
    return parse_config(Path(path).read_text())

