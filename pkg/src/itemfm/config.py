"""Sectioned key-value run configuration.

One INI file describes a whole run::

    [pipeline]
    seed = 7

    [train]
    dim = 16
    epochs = 10

Section names map to the module configs below, keys to their field names.
``[paths]`` holds file locations (``events``, ``side_features``, ``workdir``)
or a ``gen_synthetic`` generator spec.
A ``seed`` under ``[pipeline]`` seeds every stage that has no explicit seed
of its own. Every section is validated when the file is loaded, before any
work starts.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .cooc import WindowConfig
from .evaluation import EvalConfig
from .ingest import IngestConfig
from .trainer import TrainConfig

CONFIG_ENV = "ITEMFM_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AlsConfig:
    dim: int = 150
    sweeps: int = 15
    l2: float = 100.0
    alpha: float | None = None
    l2_items: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.sweeps < 0:
            raise ValueError("dim must be positive and sweeps non-negative")
        if self.l2 < 0 or (self.l2_items is not None and self.l2_items < 0):
            raise ValueError("regularization must be non-negative")
        if self.alpha is not None and self.alpha < 0:
            raise ValueError("alpha must be non-negative")


@dataclass(frozen=True)
class SplitConfig:
    split_timestamp: int | None = None
    quantile: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.quantile < 1.0:
            raise ValueError("quantile must lie strictly between 0 and 1")
        if self.split_timestamp is not None and self.split_timestamp < 0:
            raise ValueError("split_timestamp must be non-negative")


@dataclass(frozen=True)
class PipelineSection:
    seed: int | None = None
    threads: int = 1
    compose: str = "track_plus_side"
    binary: bool = True

    def __post_init__(self):
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.compose not in ("track_plus_side", "track_only", "track_plus_context_plus_side"):
            raise ValueError(f"unknown compose mode {self.compose!r}")


SECTIONS: dict[str, type] = {
    "pipeline": PipelineSection,
    "ingest": IngestConfig,
    "window": WindowConfig,
    "split": SplitConfig,
    "train": TrainConfig,
    "als": AlsConfig,
    "eval": EvalConfig,
}

# seed field of each section that the global seed fills in
_SEED_FIELDS = {"ingest": "rng_seed", "window": "rng_seed", "train": "seed", "als": "seed", "eval": "rng_seed"}


@dataclass(frozen=True)
class RunConfig:
    pipeline: PipelineSection = PipelineSection()
    ingest: IngestConfig = IngestConfig()
    window: WindowConfig = WindowConfig()
    split: SplitConfig = SplitConfig()
    train: TrainConfig = TrainConfig()
    als: AlsConfig = AlsConfig()
    eval: EvalConfig = EvalConfig()
    paths: dict[str, str] = field(default_factory=dict)

    def with_overrides(self, overrides: Mapping[str, Mapping[str, Any]]) -> RunConfig:
        """Replace fields per section; values may be strings or typed values."""
        changes = {}
        for section, values in overrides.items():
            values = {k: v for k, v in values.items() if v is not None}
            if not values:
                continue
            if section == "paths":
                changes["paths"] = {**self.paths, **{k: str(v) for k, v in values.items()}}
                continue
            current = getattr(self, section)
            changes[section] = _build(section, values, current)
        return dataclasses.replace(self, **changes)


def _convert(raw: Any, hint: Any, where: str) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    args = typing.get_args(hint)
    if type(None) in args:
        if text.lower() in ("", "none", "null"):
            return None
        hint = next(a for a in args if a is not type(None))
        args = typing.get_args(hint)
    origin = typing.get_origin(hint)
    try:
        if hint is bool:
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if origin is tuple:
            return tuple(int(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {getattr(hint, '__name__', hint)}") from None
    return text


def _build(section: str, values: Mapping[str, Any], base: Any = None) -> Any:
    cls = SECTIONS[section]
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"[{section}]: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _convert(v, hints[k], f"[{section}] {k}") for k, v in values.items()}
    try:
        return dataclasses.replace(base, **kwargs) if base is not None else cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    unknown = [s for s in parser.sections() if s not in SECTIONS and s != "paths"]
    if unknown:
        raise ConfigError(f"{source}: unknown section(s) {', '.join(unknown)}")
    raw = {s: dict(parser[s]) for s in parser.sections()}
    pipeline = _build("pipeline", raw.get("pipeline", {}))
    sections: dict[str, Any] = {"pipeline": pipeline, "paths": raw.get("paths", {})}
    for name in SECTIONS:
        if name == "pipeline":
            continue
        values = dict(raw.get(name, {}))
        seed_key = _SEED_FIELDS.get(name)
        if pipeline.seed is not None and seed_key and seed_key not in values:
            values[seed_key] = pipeline.seed
        sections[name] = _build(name, values)
    return RunConfig(**sections)


def load_config(path: str | Path | None = None) -> RunConfig:
    """Read ``path``, else the file named by ``ITEMFM_CONFIG``, else use defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is None:
        return RunConfig()
    path = Path(path)
    cfg = parse_config(path.read_text(encoding="utf-8"), str(path))
    # relative [paths] entries are relative to the config file
    paths = {
        k: v if k == "gen_synthetic" or Path(v).is_absolute() else str(path.parent / v)
        for k, v in cfg.paths.items()
    }
    return dataclasses.replace(cfg, paths=paths)


def with_global_seed(cfg: RunConfig, seed: int) -> RunConfig:
    """Apply one seed to every stage, as a ``--seed`` flag does."""
    overrides = {s: {k: seed} for s, k in _SEED_FIELDS.items()}
    overrides["pipeline"] = {"seed": seed}
    return cfg.with_overrides(overrides)
