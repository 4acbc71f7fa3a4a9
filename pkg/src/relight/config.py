"""Run configuration: an INI file layered with env vars and CLI overrides.

Resolution order, last writer wins:

1. dataclass defaults,
2. the config file (sections ``[paths]``, ``[train]``, ``[loss]``,
   ``[contrastive]``, ``[augment]``, ``[frequency]``),
3. environment variables ``RELIGHT_<SECTION>_<KEY>``,
4. ``--set section.key=value`` command-line overrides.

Values are coerced to the types declared on the target dataclasses, so a
typo'd key or a malformed value fails loudly with the section and key
named instead of training with a silently ignored setting.
"""

from __future__ import annotations

import configparser
import os
import types
import typing
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, fields

from .data import AugmentConfig
from .encoder import ContrastiveConfig
from .spectral import FrequencyLossConfig
from .training import LossWeights, TrainConfig

ENV_PREFIX = "RELIGHT_"


class ConfigError(Exception):
    """Raised when a config file, env var, or override cannot be applied."""


@dataclass
class RunPaths:
    """Filesystem anchors: where the paired dataset lives, where runs go."""

    data_root: str = "data"
    run_dir: str = "runs/default"
    train_split: str = "train"
    test_split: str = "test"


@dataclass
class RunSettings:
    """Everything a run needs, grouped by the section that configured it."""

    paths: RunPaths = field(default_factory=RunPaths)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    frequency: FrequencyLossConfig = field(default_factory=FrequencyLossConfig)


_SECTIONS: dict[str, type] = {
    "paths": RunPaths,
    "train": TrainConfig,
    "loss": LossWeights,
    "contrastive": ContrastiveConfig,
    "augment": AugmentConfig,
    "frequency": FrequencyLossConfig,
}

_TRUE_WORDS = frozenset(("1", "true", "yes", "on"))
_FALSE_WORDS = frozenset(("0", "false", "no", "off"))


def _coerce(raw: str, hint: object, where: str) -> object:
    origin = typing.get_origin(hint)
    if origin in (typing.Union, types.UnionType):
        inner = [a for a in typing.get_args(hint) if a is not type(None)]
        if raw.strip().lower() in ("none", ""):
            return None
        return _coerce(raw, inner[0], where)
    if origin is tuple:
        parts = [p.strip() for p in raw.split(",")]
        inner = typing.get_args(hint)
        if len(parts) != len(inner):
            raise ConfigError(
                f"{where}: expected {len(inner)} comma-separated values, got '{raw}'")
        return tuple(_coerce(p, t, where) for p, t in zip(parts, inner))
    if hint is bool:
        word = raw.strip().lower()
        if word in _TRUE_WORDS:
            return True
        if word in _FALSE_WORDS:
            return False
        raise ConfigError(f"{where}: expected a boolean, got '{raw}'")
    if hint is int:
        try:
            return int(raw.strip())
        except ValueError:
            raise ConfigError(f"{where}: expected an integer, got '{raw}'") from None
    if hint is float:
        try:
            return float(raw.strip())
        except ValueError:
            raise ConfigError(f"{where}: expected a number, got '{raw}'") from None
    if hint is str:
        return raw.strip()
    raise ConfigError(f"{where}: unsupported value type {hint!r}")


def _set_value(raw: dict[str, dict[str, object]], section: str, key: str,
               value: str, origin: str) -> None:
    if section not in _SECTIONS:
        raise ConfigError(f"{origin}: unknown section '{section}'")
    cls = _SECTIONS[section]
    hints = typing.get_type_hints(cls)
    valid = {f.name for f in fields(cls)}
    if key not in valid:
        raise ConfigError(f"{origin}: unknown key '{key}' in section [{section}]")
    raw[section][key] = _coerce(value, hints[key], f"{origin}: [{section}] {key}")


def _apply_file(raw: dict[str, dict[str, object]], path: str | os.PathLike) -> None:
    if not os.path.isfile(path):
        raise ConfigError(f"config file '{path}' does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config file '{path}': {exc}") from exc
    for section in parser.sections():
        for key, value in parser.items(section):
            _set_value(raw, section, key, value, f"config file '{path}'")


def _apply_env(raw: dict[str, dict[str, object]], env: Mapping[str, str]) -> None:
    for name in sorted(env):
        if not name.startswith(ENV_PREFIX):
            continue
        section, _, key = name[len(ENV_PREFIX):].partition("_")
        _set_value(raw, section.lower(), key.lower(), env[name],
                   f"environment variable {name}")


def _apply_overrides(raw: dict[str, dict[str, object]],
                     overrides: Iterable[str]) -> None:
    for item in overrides:
        target, eq, value = item.partition("=")
        section, dot, key = target.partition(".")
        if not eq or not dot or not section or not key:
            raise ConfigError(
                f"malformed override '{item}', expected section.key=value")
        _set_value(raw, section.strip(), key.strip(), value, f"override '{item}'")


def load_settings(config_path: str | os.PathLike | None = None,
                  overrides: Iterable[str] = (),
                  env: Mapping[str, str] | None = None) -> RunSettings:
    """Resolve the full run configuration from all override layers."""
    raw: dict[str, dict[str, object]] = {name: {} for name in _SECTIONS}
    if config_path is not None:
        _apply_file(raw, config_path)
    _apply_env(raw, os.environ if env is None else env)
    _apply_overrides(raw, overrides)

    built = {}
    for section, cls in _SECTIONS.items():
        try:
            built[section] = cls(**raw[section])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid [{section}] settings: {exc}") from exc
    return RunSettings(**built)
