"""Run configuration: sectioned key=value files with strict schema checks.

The file format is INI-style sections of flat ``key = value`` pairs
([model], [augment], [loss], [train]); every key is validated against the
schema and unknown sections or keys are errors, so typos never pass
silently.  Absent keys keep their defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace

from refcolor.augment import AugmentConfig
from refcolor.loss import LossConfig
from refcolor.model import ModelConfig


class ConfigError(ValueError):
    """Malformed configuration file or unknown key."""


@dataclass(frozen=True)
class TrainParams:
    steps: int = 2000
    batch_size: int = 8
    seed: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    checkpoint_interval: int = 0


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    augment: AugmentConfig
    loss: LossConfig
    train: TrainParams


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_tuple(text: str) -> tuple:
    return tuple(int(x) for x in text.split(","))


_PARSERS = {
    ("model", "channels"): _parse_int_tuple,
    ("model", "color_channels"): _parse_int_tuple,
    ("loss", "extractor_channels"): _parse_int_tuple,
}


def _field_parser(section: str, f) -> callable:
    special = _PARSERS.get((section, f.name))
    if special:
        return special
    if f.type in ("int", int):
        return int
    if f.type in ("float", float):
        return float
    if f.type in ("bool", bool):
        return _parse_bool
    return str


_SECTIONS = {
    "model": ModelConfig,
    "augment": AugmentConfig,
    "loss": LossConfig,
    "train": TrainParams,
}


def default_run_config() -> RunConfig:
    return RunConfig(ModelConfig(), AugmentConfig(), LossConfig(), TrainParams())


def load_run_config(path=None) -> RunConfig:
    """Parse a config file (or return defaults when path is None)."""
    if path is None:
        return default_run_config()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc

    kwargs = {name: {} for name in _SECTIONS}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        cls = _SECTIONS[section]
        known = {f.name: f for f in fields(cls)}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                kwargs[section][key] = _field_parser(section, known[key])(raw)
            except ValueError as exc:
                raise ConfigError(f"{path}: bad value for {section}.{key}: {exc}") from exc
    try:
        return RunConfig(
            model=ModelConfig(**kwargs["model"]),
            augment=AugmentConfig(**kwargs["augment"]),
            loss=LossConfig(**kwargs["loss"]),
            train=TrainParams(**kwargs["train"]),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def override_train(cfg: RunConfig, *, seed: int | None = None, steps: int | None = None) -> RunConfig:
    train = cfg.train
    if seed is not None:
        train = replace(train, seed=seed)
    if steps is not None:
        train = replace(train, steps=steps)
    return replace(cfg, train=train)
