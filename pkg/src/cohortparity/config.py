"""Pipeline configuration: one JSON document with a section per stage.

Example::

    {
      "synth":   {"num_groups": 4, "seed": 0},
      "data":    {"test_fraction": 0.2},
      "userlm":  {"epochs": 15},
      "cluster": {"k": 4},
      "model":   {"F": 4096},
      "trainer": {"lambda": 0.5},
      "eval":    {"cohorts": ["attr:group", "implicit"]}
    }

Every section and key is optional; unknown ones are rejected. Command-line
``--set section.key=value`` overrides are parsed as JSON when possible and as
plain strings otherwise.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Sequence

from .data import ConfigError, SyntheticConfig
from .model import ModelConfig
from .trainer import TrainConfig
from .userlm import LMConfig


@dataclass(frozen=True)
class DataConfig:
    """``path`` is the JSONL input; ``None`` means ``<out>/data.jsonl``."""

    path: str | None = None
    test_fraction: float = 0.2
    split_seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("data.test_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class ClusterConfig:
    k: int = 4
    seed: int = 0
    max_iter: int = 100
    tol: float = 1e-6
    normalize: bool = False

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("cluster.k must be >= 1")
        if self.max_iter < 1 or self.tol < 0:
            raise ConfigError("cluster.max_iter must be >= 1 and cluster.tol >= 0")


@dataclass(frozen=True)
class EvalConfig:
    """Cohort sources are strings: ``attr:NAME``, ``threshold:NAME:T``,
    ``implicit`` or ``csv:PATH``, joined with ``+`` to intersect them.
    ``train_cohort`` is the source the parity penalty uses."""

    cohorts: tuple[str, ...] = ("attr:group", "implicit")
    train_cohort: str = "attr:group"
    positive_classes: tuple[int, ...] = (1,)
    lambdas: tuple[float, ...] = (0.0, 0.5, 0.8)
    formats: tuple[str, ...] = ("csv", "json", "markdown")

    def validate(self) -> None:
        if not self.cohorts:
            raise ConfigError("eval.cohorts must be nonempty")
        if not self.lambdas:
            raise ConfigError("eval.lambdas must be nonempty")
        if any(lam < 0 for lam in self.lambdas):
            raise ConfigError("eval.lambdas must be >= 0")
        bad = [f for f in self.formats if f not in ("csv", "json", "markdown")]
        if bad:
            raise ConfigError(f"eval.formats: unknown format(s) {bad}")


@dataclass(frozen=True)
class PathsConfig:
    out: str = "run"


SECTIONS: dict[str, type] = {
    "synth": SyntheticConfig,
    "data": DataConfig,
    "userlm": LMConfig,
    "cluster": ClusterConfig,
    "model": ModelConfig,
    "trainer": TrainConfig,
    "eval": EvalConfig,
    "paths": PathsConfig,
}

# accepted spellings that differ from the dataclass field name
ALIASES = {("trainer", "lambda"): "lam"}

SEED_KEYS = (("synth", "seed"), ("data", "split_seed"), ("userlm", "seed"),
             ("cluster", "seed"), ("model", "seed"), ("trainer", "seed"))


@dataclass(frozen=True)
class RunConfig:
    synth: SyntheticConfig = field(default_factory=SyntheticConfig)
    data: DataConfig = field(default_factory=DataConfig)
    userlm: LMConfig = field(default_factory=LMConfig)
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    trainer: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self) -> "RunConfig":
        for name in SECTIONS:
            section = getattr(self, name)
            check = getattr(section, "validate", None)
            if check is not None:
                try:
                    check()
                except ConfigError:
                    raise
                except ValueError as exc:
                    raise ConfigError(f"{name}: {exc}") from None
        return self

    def to_dict(self) -> dict[str, dict[str, Any]]:
        out = {}
        for name in SECTIONS:
            section = getattr(self, name)
            out[name] = {f.name: _jsonable(getattr(section, f.name)) for f in fields(section)}
        return out

    def with_seed(self, seed: int) -> "RunConfig":
        return apply_overrides(self, {f"{s}.{k}": seed for s, k in SEED_KEYS})


def _jsonable(value):
    return list(value) if isinstance(value, tuple) else value


def _coerce(value):
    """JSON lists become tuples so config sections stay hashable."""
    return tuple(value) if isinstance(value, list) else value


def _field_names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def _section_from_mapping(name: str, raw: Mapping[str, Any], base=None):
    cls = SECTIONS[name]
    if not isinstance(raw, Mapping):
        raise ConfigError(f"section {name!r} must be an object")
    known = _field_names(cls)
    kwargs = {}
    for key, value in raw.items():
        attr = ALIASES.get((name, key), key)
        if attr not in known:
            raise ConfigError(f"unknown key {name}.{key}")
        kwargs[attr] = _coerce(value)
    try:
        return replace(base, **kwargs) if base is not None else cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


def config_from_dict(raw: Mapping[str, Any]) -> RunConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    parts = {name: _section_from_mapping(name, raw[name]) for name in raw}
    return RunConfig(**parts)


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(raw)


def parse_override(text: str) -> tuple[str, Any]:
    """``"trainer.lam=0.5"`` -> ``("trainer.lam", 0.5)``."""
    key, sep, value = text.partition("=")
    if not sep or "." not in key:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return key, parsed


def apply_overrides(config: RunConfig, overrides: Mapping[str, Any] | Sequence[str]) -> RunConfig:
    if not isinstance(overrides, Mapping):
        overrides = dict(parse_override(o) for o in overrides)
    grouped: dict[str, dict[str, Any]] = {}
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r} in override {dotted!r}")
        grouped.setdefault(section, {})[key] = value
    updates = {s: _section_from_mapping(s, kv, getattr(config, s)) for s, kv in grouped.items()}
    return replace(config, **updates)


def dump_config(config: RunConfig, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
