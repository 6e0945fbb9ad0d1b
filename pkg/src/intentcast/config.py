"""Model and training configuration with strict JSON loading.

Unknown keys are rejected on load: a silently ignored hyperparameter typo is
the classic reproducibility failure.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Shape-defining hyperparameters; these are what a checkpoint records."""

    t_h: int = 4
    t_f: int = 6
    rate_hz: float = 2.0
    d_h: int = 64
    heads: int = 4
    modes: int = 6
    alpha: float = 0.5
    gamma_radius: float = 40.0
    si_enabled: bool = True
    activation: str = "relu"

    def validate(self) -> "ModelConfig":
        if self.t_h < 2:
            raise ConfigError("t_h must be >= 2")
        if self.t_f < 1:
            raise ConfigError("t_f must be >= 1")
        if self.rate_hz <= 0:
            raise ConfigError("rate_hz must be positive")
        if self.d_h < 1 or self.heads < 1 or self.modes < 1:
            raise ConfigError("d_h, heads and modes must be positive")
        if self.d_h % self.heads:
            raise ConfigError(f"d_h={self.d_h} must be divisible by heads={self.heads}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.gamma_radius <= 0:
            raise ConfigError("gamma_radius must be positive")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        return self

    def hyperparams(self) -> dict:
        """Checkpoint hyperparameter record."""
        return {
            "d_h": self.d_h,
            "heads": self.heads,
            "M": self.modes,
            "T_h": self.t_h,
            "T_f": self.t_f,
            "alpha": self.alpha,
            "gamma": self.gamma_radius,
            "si_enabled": self.si_enabled,
            "activation": self.activation,
            "rate_hz": self.rate_hz,
        }

    @classmethod
    def from_hyperparams(cls, h: dict) -> "ModelConfig":
        try:
            return cls(
                t_h=int(h["T_h"]),
                t_f=int(h["T_f"]),
                rate_hz=float(h["rate_hz"]),
                d_h=int(h["d_h"]),
                heads=int(h["heads"]),
                modes=int(h["M"]),
                alpha=float(h["alpha"]),
                gamma_radius=float(h["gamma"]),
                si_enabled=bool(h["si_enabled"]),
                activation=str(h["activation"]),
            ).validate()
        except KeyError as exc:
            raise ConfigError(f"hyperparams missing key {exc}") from exc


@dataclass
class TrainConfig(ModelConfig):
    """Optimization settings on top of the model shape."""

    learning_rate: float = 5e-4
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 128
    seed: int = 0
    loss_variant: str = "paper_l2"
    teacher_forcing: bool = True
    val_split: float = 0.1

    def validate(self) -> "TrainConfig":
        super().validate()
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate and weight_decay must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.loss_variant not in ("paper_l2", "laplace_nll"):
            raise ConfigError(f"unknown loss_variant {self.loss_variant!r}")
        if not 0.0 <= self.val_split < 1.0:
            raise ConfigError("val_split must lie in [0, 1)")
        return self

    def model_config(self) -> ModelConfig:
        names = [f.name for f in dataclasses.fields(ModelConfig)]
        return ModelConfig(**{n: getattr(self, n) for n in names})


def dataclass_from_dict(cls, obj: dict, where: str = "config"):
    """Build a dataclass from a dict, rejecting unknown keys."""
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected a JSON object")
    allowed = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for key, value in obj.items():
        f = allowed[key]
        if f.type in ("int", int) and isinstance(value, bool):
            raise ConfigError(f"{where}.{key}: expected a number")
        kwargs[key] = value
    try:
        built = cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return built


def load_train_config(path: str | Path) -> TrainConfig:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    cfg = dataclass_from_dict(TrainConfig, obj, where=str(path))
    return cfg.validate()
