"""Experiment configuration with strict, canonical JSON serialization."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .models import Variant


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class TrainConfig:
    variant: str = "sgvb_ard"
    latent_dim: int = 50
    hidden_sizes: list = field(default_factory=lambda: [200])
    likelihood: str = "gaussian"
    shared_log_var: bool = False
    optimizer: str = "rmsprop"
    learning_rate: float = 1e-4
    rho: float = 0.9
    momentum: float = 0.9
    epsilon: float = 1e-6
    clip_norm: float = 0.0
    batch_size: int = 200
    iterations: int = 10000
    epochs: int = 0
    n_w: int = 1
    n_z: int = 1
    kl_w_mode: str = "per_epoch"
    lambda_update: str = "gradient"
    seed: int = 0
    data_path: str = ""
    data_format: str = ""
    train_count: int = 0
    test_count: int = 0
    split_seed: int = 0
    standardize: str = "unit_range"
    eval_every: int = 100
    eval_window: int = 100
    checkpoint_every: int = 0
    retention_rule: str = "ard_mass"
    retention_threshold: float = 0.01
    deterministic: bool = True

    def validate(self) -> "TrainConfig":
        try:
            v = Variant.parse(self.variant)
        except ValueError as exc:
            raise ConfigError("variant", str(exc)) from None
        self.variant = v.value
        for name in ("latent_dim", "batch_size", "n_w", "n_z", "eval_window"):
            val = getattr(self, name)
            if not isinstance(val, int) or isinstance(val, bool) or val < 1:
                raise ConfigError(name, f"must be a positive integer, got {val!r}")
        for name in ("iterations", "epochs", "train_count", "test_count", "eval_every", "checkpoint_every", "seed",
                     "split_seed"):
            val = getattr(self, name)
            if not isinstance(val, int) or isinstance(val, bool) or val < 0:
                raise ConfigError(name, f"must be a non-negative integer, got {val!r}")
        if (self.iterations > 0) == (self.epochs > 0):
            raise ConfigError("iterations", "set exactly one of iterations and epochs")
        if not isinstance(self.hidden_sizes, list) or any(
                not isinstance(h, int) or isinstance(h, bool) or h < 1 for h in self.hidden_sizes):
            raise ConfigError("hidden_sizes", f"must be a list of positive integers, got {self.hidden_sizes!r}")
        choices = {
            "likelihood": ("gaussian", "bernoulli"),
            "optimizer": ("rmsprop", "sgd"),
            "kl_w_mode": ("per_epoch", "per_datapoint"),
            "lambda_update": ("gradient", "closed_form"),
            "standardize": ("none", "unit_range", "zscore"),
            "retention_rule": ("ard_mass", "weight_norm"),
            "data_format": ("", "csv", "flat_f32"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(name, f"must be one of {list(allowed)}, got {getattr(self, name)!r}")
        if self.lambda_update == "closed_form" and v is Variant.GSGVB_ARD:
            raise ConfigError("lambda_update", "closed_form applies to sgvb_ard only")
        for name in ("learning_rate", "epsilon", "clip_norm"):
            val = getattr(self, name)
            if not isinstance(val, (int, float)) or isinstance(val, bool) or val < 0:
                raise ConfigError(name, f"must be a non-negative number, got {val!r}")
        for name in ("rho", "momentum"):
            val = getattr(self, name)
            if not isinstance(val, (int, float)) or not 0.0 <= val < 1.0:
                raise ConfigError(name, f"must lie in [0, 1), got {val!r}")
        if not 0.0 < self.retention_threshold < 1.0:
            raise ConfigError("retention_threshold", f"must lie in (0, 1), got {self.retention_threshold!r}")
        for name in ("shared_log_var", "deterministic"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(name, "must be true or false")
        return self

    @property
    def variant_enum(self) -> Variant:
        return Variant.parse(self.variant)

    def total_iterations(self, n_train: int) -> int:
        if self.iterations:
            return self.iterations
        return self.epochs * -(-n_train // self.batch_size)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def dumps(self) -> str:
        """Canonical text: declared field order, two-space indent, trailing newline."""
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown configuration key")
        cfg = cls(**raw)
        if isinstance(cfg.learning_rate, int):
            cfg.learning_rate = float(cfg.learning_rate)
        return cfg.validate()

    @classmethod
    def loads(cls, text: str) -> "TrainConfig":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("<file>", "top level must be an object")
        return cls.from_dict(raw)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.loads(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())


def _frey(hidden: int, latent: int, variant: str) -> TrainConfig:
    return TrainConfig(variant=variant, latent_dim=latent, hidden_sizes=[hidden], learning_rate=1e-4,
                       batch_size=200, iterations=10000, train_count=1600, test_count=365,
                       data_path="frey_faces.f32", standardize="unit_range")


_VARIANT_TAGS = {"sgvb": "sgvb", "ard": "sgvb_ard", "gsgvb": "gsgvb_ard"}

PRESETS: dict[str, TrainConfig] = {
    f"frey_{h}h_{z}z_{tag}": _frey(h, z, variant)
    for h in (200, 400) for z in (50, 100) for tag, variant in _VARIANT_TAGS.items()
}


def preset(name: str) -> TrainConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; available: {sorted(PRESETS)}")
    return TrainConfig.from_dict(PRESETS[name].to_dict())
