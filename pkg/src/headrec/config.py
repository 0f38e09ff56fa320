"""Flat ``key = value`` run configuration covering training and loss settings."""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .objectives import LossWeights
from .training import TrainConfig

_TRUE = {"1", "true", "on", "yes"}
_FALSE = {"0", "false", "off", "no"}


class ConfigError(ValueError):
    pass


def parse_bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _fields(cls) -> dict:
    return {f.name: type(f.default) for f in dataclasses.fields(cls)}


TRAIN_KEYS = _fields(TrainConfig)
LOSS_KEYS = _fields(LossWeights)


def _convert(key: str, kind: type, raw):
    if isinstance(raw, bool):
        if kind is bool:
            return raw
        raise ConfigError(f"{key}: expected a number, got a boolean")
    try:
        if kind is bool:
            return parse_bool(raw)
        if kind is int:
            return int(str(raw).strip())
        if kind is float:
            return float(str(raw).strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    return raw


def parse_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines; ``#`` starts a comment.  Unknown keys are errors."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in TRAIN_KEYS and key not in LOSS_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def load(path) -> dict:
    p = Path(path)
    return parse_text(p.read_text(encoding="utf-8"), str(p))


def resolve(values: dict, overrides: dict | None = None) -> tuple[TrainConfig, LossWeights]:
    """Build both config objects; ``overrides`` (non-None entries) win over ``values``."""
    merged = dict(values)
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    train, loss = {}, {}
    for key, raw in merged.items():
        if key in TRAIN_KEYS:
            train[key] = _convert(key, TRAIN_KEYS[key], raw)
        elif key in LOSS_KEYS:
            loss[key] = _convert(key, LOSS_KEYS[key], raw)
        else:
            raise ConfigError(f"unknown key {key!r}")
    try:
        return TrainConfig(**train), LossWeights(**loss)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def dump(cfg: TrainConfig, weights: LossWeights) -> str:
    """Sorted ``key = value`` text that ``parse_text`` reads back unchanged."""
    items = {**dataclasses.asdict(cfg), **dataclasses.asdict(weights)}
    lines = []
    for k in sorted(items):
        v = items[k]
        if isinstance(v, bool):
            v = "on" if v else "off"
        lines.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
    return "\n".join(lines) + "\n"
