"""Flat key-value configuration files: UTF-8 text, one ``key = value`` per
line, ``#`` starts a comment. Every run directory receives a complete echo of
its configuration through these helpers, so no default stays hidden."""

from __future__ import annotations

from pathlib import Path

__all__ = ["read_config", "write_config", "get_int", "get_float", "get_bool", "get_str"]


def read_config(path) -> dict:
    cfg = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


def write_config(path, cfg: dict):
    lines = [f"{key} = {value}" for key, value in cfg.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def get_int(cfg: dict, key: str, default: int | None = None) -> int:
    if key not in cfg or cfg[key] == "":
        if default is None:
            raise KeyError(f"missing config key {key!r}")
        return default
    return int(cfg[key])


def get_float(cfg: dict, key: str, default: float | None = None) -> float:
    if key not in cfg or cfg[key] == "":
        if default is None:
            raise KeyError(f"missing config key {key!r}")
        return float(default)
    return float(cfg[key])


def get_bool(cfg: dict, key: str, default: bool | None = None) -> bool:
    if key not in cfg or cfg[key] == "":
        if default is None:
            raise KeyError(f"missing config key {key!r}")
        return default
    value = cfg[key].lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"config key {key!r} has non-boolean value {cfg[key]!r}")


def get_str(cfg: dict, key: str, default: str | None = None) -> str:
    if key not in cfg or cfg[key] == "":
        if default is None:
            raise KeyError(f"missing config key {key!r}")
        return default
    return cfg[key]
