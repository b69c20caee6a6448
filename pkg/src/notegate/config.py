"""Pipeline configuration: TOML file, ``NOTEGATE_CONFIG`` fallback, flag overrides."""
from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .decode import DecodeConfig
from .evaluate import MatchConfig
from .features import FeatureConfig
from .pitch import PitchConfig

ENV_VAR = "NOTEGATE_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelPaths:
    note_graph: str | None = None
    note_weights: str | None = None
    phoneme_graph: str | None = None
    phoneme_weights: str | None = None
    inventory: str | None = None


@dataclass(frozen=True)
class PipelineConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    pitch: PitchConfig = field(default_factory=PitchConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    match: MatchConfig = field(default_factory=MatchConfig)
    smoothing: int = 5
    n_phonemes: int = 39
    model: ModelPaths = field(default_factory=ModelPaths)

    def as_dict(self) -> dict:
        return asdict(self)

    def override(self, section: str, **values) -> "PipelineConfig":
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        if section == "top":
            return replace(self, **values)
        return replace(self, **{section: replace(getattr(self, section), **values)})


_SECTIONS = {"features": FeatureConfig, "pitch": PitchConfig, "decode": DecodeConfig,
             "match": MatchConfig, "model": ModelPaths}


def from_mapping(data: dict) -> PipelineConfig:
    cfg = PipelineConfig()
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"[{key}] must be a table")
            allowed = {f.name for f in fields(_SECTIONS[key])}
            unknown = set(value) - allowed
            if unknown:
                raise ConfigError(f"unknown keys in [{key}]: {sorted(unknown)}")
            try:
                cfg = cfg.override(key, **value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{key}]: {exc}") from exc
        elif key in ("smoothing", "n_phonemes"):
            cfg = cfg.override("top", **{key: int(value)})
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if cfg.smoothing < 1 or cfg.smoothing % 2 == 0:
        raise ConfigError(f"smoothing must be an odd positive integer, got {cfg.smoothing}")
    return cfg


def load_config(path=None) -> PipelineConfig:
    """Load ``path``, else ``$NOTEGATE_CONFIG``, else the defaults."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return PipelineConfig()
    try:
        data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_mapping(data)
