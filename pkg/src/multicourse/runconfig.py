"""Flat key-value run configuration with a strict schema.

The config file is a single flat JSON object. Unknown keys are errors, not
warnings: a silently ignored typo in a course switch would invalidate an
experiment. Validation happens before any model memory is allocated.
"""

import json
from dataclasses import dataclass, fields

from .courses import CorruptionRates
from .encoder import EncoderConfig
from .errors import ConfigError
from .trainer import TrainConfig

_ENCODER_KEYS = {
    "hidden_size": int,
    "generator_layers": int,
    "discriminator_layers": int,
    "attention_heads": int,
    "ffn_inner_size": int,
    "max_relative_position": int,
    "max_seq_len": int,
    "dropout_rate": float,
}
_RATE_KEYS = {"mask_rate": float, "swap_rate": float, "insert_rate": float}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_PATH_KEYS = {"corpus_path": str, "run_dir": str, "max_vocab_size": int}

_ALL_KEYS = set(_ENCODER_KEYS) | set(_RATE_KEYS) | set(_PATH_KEYS) | _TRAIN_KEYS

_BOOL_TRAIN_KEYS = {"std_course", "itd_course", "re_mlm", "re_rtd", "re_slm", "re_std"}
_FLOAT_TRAIN_KEYS = {
    "lambda_disc", "learning_rate", "adam_beta1", "adam_beta2", "adam_epsilon",
    "grad_clip_norm", "weight_decay",
} | {f"weight_{n}" for n in
     ("mlm", "slm", "re_mlm", "re_slm", "rtd", "std", "itd", "re_rtd", "re_std")}


@dataclass(frozen=True)
class RunConfig:
    encoder_overrides: dict
    rates: CorruptionRates
    train: TrainConfig
    corpus_path: str
    run_dir: str
    max_vocab_size: int = 8192

    def encoder_config(self, vocab_size) -> EncoderConfig:
        return EncoderConfig(vocab_size=vocab_size, **self.encoder_overrides)


def _coerce(key, value):
    if key in _BOOL_TRAIN_KEYS:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    if key in _FLOAT_TRAIN_KEYS or key in _RATE_KEYS or key == "dropout_rate":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if key in ("corpus_path", "run_dir"):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return value


def parse_config(raw: dict) -> RunConfig:
    """Validate a flat mapping and split it into the typed config objects."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a flat JSON object")
    unknown = set(raw) - _ALL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for required in ("corpus_path", "run_dir"):
        if required not in raw:
            raise ConfigError(f"missing required config key {required!r}")
    values = {k: _coerce(k, v) for k, v in raw.items()}

    rates = CorruptionRates(**{k: values[k] for k in _RATE_KEYS if k in values})
    train = TrainConfig(**{k: values[k] for k in _TRAIN_KEYS if k in values})
    encoder_overrides = {k: values[k] for k in _ENCODER_KEYS if k in values}
    # fail fast on bad encoder fields without needing the vocabulary yet
    EncoderConfig(vocab_size=8, **{**encoder_overrides, "max_seq_len": 8})
    return RunConfig(
        encoder_overrides=encoder_overrides,
        rates=rates,
        train=train,
        corpus_path=values["corpus_path"],
        run_dir=values["run_dir"],
        max_vocab_size=values.get("max_vocab_size", 8192),
    )


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse_config(raw)


def default_config_dict(corpus_path, run_dir, **overrides):
    """A complete flat config with the desk-scale defaults."""
    base = {
        "corpus_path": str(corpus_path),
        "run_dir": str(run_dir),
        "max_vocab_size": 8192,
        "hidden_size": 128,
        "generator_layers": 2,
        "discriminator_layers": 4,
        "attention_heads": 4,
        "ffn_inner_size": 512,
        "max_relative_position": 128,
        "max_seq_len": 128,
        "dropout_rate": 0.1,
        "mask_rate": 0.15,
        "swap_rate": 0.15,
        "insert_rate": 0.15,
        "lambda_disc": 50.0,
        "learning_rate": 5e-4,
        "warmup_steps": 400,
        "total_steps": 5000,
        "batch_size": 32,
        "seed": 0,
    }
    base.update(overrides)
    return base


def save_config(config_dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_dict, fh, indent=2, sort_keys=True)
        fh.write("\n")
