"""Flat ``key = value`` run configuration with typed parsing and unknown-key rejection."""
from __future__ import annotations

import os
from dataclasses import fields

from .model import MorseConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _path(text: str) -> str | None:
    return text.strip() or None


# key -> (parser, default); None default means "optional, unset"
TRAIN_KEYS = {
    "train": (_path, None),
    "dev": (_path, None),
    "test": (_path, None),
    "format": (str, "trmor"),
    "mode": (str, "joint"),
    "hidden_size": (int, 512),
    "char_embed_size": (int, 64),
    "feat_embed_size": (int, 256),
    "use_context": (_bool, True),
    "use_output_encoder": (_bool, True),
    "output_state_carry": (_bool, False),
    "max_decode_len": (int, 64),
    "dtype": (str, "float64"),
    "lr": (float, 1.6),
    "decay_factor": (float, 0.8),
    "decay_patience": (int, 5),
    "stop_patience": (int, 10),
    "dropout": (float, 0.5),
    "max_epochs": (int, 100),
    "seed": (int, 1),
    "batch_size": (int, 1),
    "clip_norm": (float, 0.0),
}

SYNTH_KEYS = {
    "grammar": (_path, None),
    "grammar_seed": (int, 0),
    "n_sentences": (int, 500),
    "seed": (int, 1),
    "unseen_pct": (float, -1.0),  # negative: plain random split
    "test_fraction": (float, 0.2),
    "dev_fraction": (float, 0.1),
    "min_len": (int, 3),
    "max_len": (int, 8),
}

PATH_KEYS = {"train", "dev", "test", "grammar"}


def parse_config(text: str, schema: dict = TRAIN_KEYS, base_dir: str | None = None) -> dict:
    values = {k: default for k, (_, default) in schema.items()}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in schema:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        parser = schema[key][0]
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
        if key in PATH_KEYS and base_dir and parsed and not os.path.isabs(parsed):
            parsed = os.path.normpath(os.path.join(base_dir, parsed))
        values[key] = parsed
    return values


def load_config(path: str, schema: dict = TRAIN_KEYS) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), schema, os.path.dirname(os.path.abspath(path)))


def model_config(values: dict) -> MorseConfig:
    names = {f.name for f in fields(MorseConfig)}
    try:
        return MorseConfig(**{k: v for k, v in values.items() if k in names})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def train_config(values: dict) -> TrainConfig:
    names = {f.name for f in fields(TrainConfig)}
    try:
        return TrainConfig(**{k: v for k, v in values.items() if k in names})
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def format_config(values: dict) -> str:
    return "".join(f"{k} = {'' if v is None else str(v).lower() if isinstance(v, bool) else v}\n"
                   for k, v in values.items())
