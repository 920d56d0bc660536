"""Run configuration: flat ``section.key`` JSON mapping onto the module dataclasses."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .model import FatigueNetConfig
from .nn import TrainConfig
from .pipeline import PreprocessConfig


class ConfigError(ValueError):
    pass


@dataclass
class SynthSection:
    preset: str = "desk"
    subjects: int = 10
    signature_gain: float = 1.0
    duration_min: int = 0            # 0 keeps the preset value
    sample_rate: float = 0.0         # 0 keeps the preset value


@dataclass
class WelchSection:
    seg_len: int = 100
    overlap: float = 0.5


@dataclass
class CVSection:
    k: int = 5
    repeats: int = 4
    stratified: bool = True
    pooled: bool = False


@dataclass
class SvmSection:
    lam: float = 3e-2
    epochs: int = 20


@dataclass
class RunConfig:
    seed: int = 0
    synth: SynthSection = field(default_factory=SynthSection)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    welch: WelchSection = field(default_factory=WelchSection)
    net: FatigueNetConfig = field(default_factory=FatigueNetConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10))
    cv: CVSection = field(default_factory=CVSection)
    svm: SvmSection = field(default_factory=SvmSection)

    # ---------------------------------------------------------------- flat view
    def to_flat(self) -> dict:
        out = {"seed": self.seed}
        for f in fields(self):
            if f.name == "seed":
                continue
            section = getattr(self, f.name)
            for sf in fields(section):
                out[f"{f.name}.{sf.name}"] = _jsonable(getattr(section, sf.name))
        return out

    @classmethod
    def from_flat(cls, flat: dict) -> "RunConfig":
        cfg = cls()
        return cfg.override(flat)

    def override(self, flat: dict) -> "RunConfig":
        """New config with the given ``section.key`` values replaced; unknown keys are errors."""
        known = self.to_flat()
        unknown = sorted(set(flat) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = self
        if "seed" in flat:
            cfg = replace(cfg, seed=_coerce("seed", flat["seed"], known["seed"]))
        by_section: dict[str, dict] = {}
        for key, value in flat.items():
            if key == "seed":
                continue
            sec, name = key.split(".", 1)
            by_section.setdefault(sec, {})[name] = _coerce(key, value, known[key])
        for sec, values in by_section.items():
            try:
                section = replace(getattr(cfg, sec), **values)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"invalid value in section {sec!r}: {exc}") from exc
            cfg = replace(cfg, **{sec: section})
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_flat(), indent=2, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        canon = json.dumps(self.to_flat(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def save(self, directory) -> Path:
        """Write the fully resolved config as ``config.json`` inside ``directory``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        path = d / "config.json"
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            flat = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(flat, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_flat(flat)


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    return v


def _coerce(key, value, default):
    """Check ``value`` against the type of the default and convert lists back to tuples."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return _to_tuple(value)
    if default is None:
        return _to_tuple(value) if isinstance(value, list) else value
    raise ConfigError(f"{key}: unsupported type")


def _to_tuple(v):
    return tuple(_to_tuple(x) for x in v) if isinstance(v, list) else v
