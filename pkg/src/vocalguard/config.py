"""Run configuration: one TOML file with a section per module.

Unknown sections or keys are rejected. Flags on the command line override
single keys after the file is read.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .attack import PgdConfig
from .errors import ConfigError
from .features import PitchConfig
from .neuralnet import M5Config, TrainConfig
from .synth import ADAPTATIONS, CorpusSpec

log = logging.getLogger(__name__)

# Desk-scale CNN: a long stride in the first block keeps PGD over 6-s inputs cheap
DESK_M5 = M5Config(blocks=((128, 80, 16), (128, 3, 1), (256, 3, 1), (512, 3, 1)), desk_scale=True)
DESK_TRAIN = TrainConfig(max_lr=1e-3, cycle_steps=200, total_steps=400)


@dataclass(frozen=True)
class SvmSection:
    C: float = 1.0
    rfe_n: int = 10
    ridge_feature: str = "pitch_mean"
    ridge_lambda: float = 0.0


@dataclass(frozen=True)
class EvalSection:
    segment_s: float = 6.0
    test_per_gender: int = 30
    adaptation_per_gender: int = 10
    adaptations: tuple[str, ...] = tuple(ADAPTATIONS)


@dataclass(frozen=True)
class SeedSection:
    # every other seed is derived from this one
    base: int = 0

    @property
    def train_corpus(self) -> int:
        return self.base + 1

    @property
    def test_corpus(self) -> int:
        return self.base + 2

    @property
    def adaptation_corpus(self) -> int:
        return self.base + 3

    @property
    def cnn_a(self) -> int:
        return self.base

    @property
    def cnn_b(self) -> int:
        return self.base + 101


@dataclass(frozen=True)
class PathSection:
    out: str = "vocalguard_out"


@dataclass(frozen=True)
class RunConfig:
    pitch: PitchConfig = PitchConfig()
    synth: CorpusSpec = CorpusSpec(n_per_gender=100)
    m5: M5Config = DESK_M5
    train: TrainConfig = DESK_TRAIN
    pgd: PgdConfig = PgdConfig()
    svm: SvmSection = SvmSection()
    eval: EvalSection = EvalSection()
    seeds: SeedSection = SeedSection()
    paths: PathSection = PathSection()

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


# keys that may not be set from the file: they are derived from [seeds]
_DERIVED = {"synth": {"seed", "tags", "id_prefix"}, "train": {"seed"}}


def _tuplify(v: Any) -> Any:
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def _build(cls, section: str, values: dict):
    if not isinstance(values, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name for f in fields(cls)} - _DERIVED.get(section, set())
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    try:
        return cls(**{k: _tuplify(v) for k, v in values.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def from_dict(d: dict) -> RunConfig:
    defaults = RunConfig()
    kwargs = {}
    top = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(d) - top)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    for name, values in d.items():
        base = getattr(defaults, name)
        merged = {**{k: getattr(base, k) for k in (f.name for f in fields(base))
                     if k not in _DERIVED.get(name, set())}, **_check_table(name, values)}
        kwargs[name] = _build(type(base), name, merged) if values else base
    cfg = replace(defaults, **kwargs)
    if cfg.svm.ridge_feature not in _feature_names():
        raise ConfigError(f"[svm] ridge_feature: unknown feature {cfg.svm.ridge_feature!r}")
    bad = [a for a in cfg.eval.adaptations if a not in ADAPTATIONS]
    if bad:
        raise ConfigError(f"[eval] adaptations: unknown {bad}")
    return cfg


def _check_table(name: str, values: Any) -> dict:
    if not isinstance(values, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(getattr(RunConfig(), name))} - _DERIVED.get(name, set())
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    return values


def _feature_names():
    from .features import FEATURE_NAMES

    return FEATURE_NAMES


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return from_dict(raw)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def override(cfg: RunConfig, key: str, value: Any) -> RunConfig:
    """Set ``section.key`` on a loaded config, re-running validation."""
    section, _, name = key.partition(".")
    d = cfg.to_dict()
    for s, keys in _DERIVED.items():
        for k in keys:
            d[s].pop(k, None)
    if section not in d or name not in d[section]:
        raise ConfigError(f"unknown config key {key!r}")
    d[section][name] = value
    return from_dict(d)


def log_resolved(cfg: RunConfig) -> None:
    log.info("resolved config:\n%s", cfg.to_json())


def dump_toml(cfg: RunConfig) -> str:
    """Render a config as TOML (tuples become arrays)."""

    def val(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, float)):
            return repr(v)
        if isinstance(v, str):
            return json.dumps(v)
        if isinstance(v, (tuple, list)):
            return "[" + ", ".join(val(x) for x in v) + "]"
        if v is None:
            raise ValueError("None has no TOML form")
        raise TypeError(type(v))

    lines = []
    for f in fields(cfg):
        sec = getattr(cfg, f.name)
        lines.append(f"[{f.name}]")
        for g in fields(sec):
            if g.name in _DERIVED.get(f.name, set()):
                continue
            v = getattr(sec, g.name)
            if v is None:
                continue
            lines.append(f"{g.name} = {val(v)}")
        lines.append("")
    return "\n".join(lines)
