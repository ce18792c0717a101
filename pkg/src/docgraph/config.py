"""``key = value`` configuration files.

Keys are the field names of :class:`ModelConfig` and :class:`TrainConfig`
plus a few run-level keys (``bpe_merges``, ``stage2_steps``, ...).  Lines
starting with ``#`` are comments.
"""

from __future__ import annotations

from dataclasses import fields
from pathlib import Path

from .model import ModelConfig, _coerce
from .training import TrainConfig

MODEL_KEYS = {f.name for f in fields(ModelConfig)}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


class ConfigError(ValueError):
    pass


def parse_kv(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_kv(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"), str(path))


def split(kv: dict[str, str], extra_keys=()) -> tuple[dict, dict, dict]:
    """Partition into model keys, train keys and the declared extra keys."""
    model, train, other = {}, {}, {}
    for k, v in kv.items():
        if k in MODEL_KEYS:
            model[k] = v
        elif k in TRAIN_KEYS:
            train[k] = v
        elif k in extra_keys:
            other[k] = v
        else:
            raise ConfigError(f"unknown configuration key {k!r}")
    return model, train, other


def model_config(values: dict, src_vocab: int, tgt_vocab: int) -> ModelConfig:
    d = {"src_vocab": src_vocab, "tgt_vocab": tgt_vocab}
    d.update(values)
    try:
        return ModelConfig.from_dict(d)
    except (KeyError, ValueError) as e:
        raise ConfigError(str(e)) from e


def train_config(values: dict, **defaults) -> TrainConfig:
    d = dict(defaults)
    d.update(values)
    try:
        return TrainConfig(**_coerce(TrainConfig, d))
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(str(e)) from e
