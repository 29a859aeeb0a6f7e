"""Configuration records and dotted-key override resolution."""

from __future__ import annotations

import dataclasses
import enum
import json
from dataclasses import dataclass, field
from typing import Any


class Label(enum.IntEnum):
    """Per-pixel scribble label."""

    UNLABELED = 0
    FOREGROUND = 1
    BACKGROUND = 2


class ConfigError(ValueError):
    pass


@dataclass
class LscConfig:
    kernel_size: int = 5
    sigma_p: float = 6.0
    sigma_i: float = 0.1
    weight_norm: float = 1.0

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"lsc.kernel_size must be odd and >= 1, got {self.kernel_size}")
        if self.sigma_p <= 0 or self.sigma_i <= 0:
            raise ConfigError("lsc.sigma_p and lsc.sigma_i must be positive")
        if self.weight_norm <= 0:
            raise ConfigError("lsc.weight_norm must be positive")


@dataclass
class ObjectiveConfig:
    beta: float = 0.3
    alpha: float = 0.85
    # ordered from the decoder stage nearest the output to the deepest
    lambda_q: tuple = (0.8, 0.6, 0.4)
    rho: float = 0.5

    def __post_init__(self):
        self.lambda_q = tuple(float(v) for v in self.lambda_q)
        if self.beta < 0:
            raise ConfigError("objective.beta must be >= 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("objective.alpha must lie in [0, 1]")
        if len(self.lambda_q) != 3 or any(v < 0 for v in self.lambda_q):
            raise ConfigError("objective.lambda_q must be three non-negative weights")
        if not 0.0 < self.rho < 1.0:
            raise ConfigError("objective.rho must lie in (0, 1)")


@dataclass
class NetworkConfig:
    stage_channels: tuple = (16, 32, 64, 128)
    input_size: int = 64
    global_channels: int = 128
    decoder_channels: int = 32

    def __post_init__(self):
        self.stage_channels = tuple(int(c) for c in self.stage_channels)
        if len(self.stage_channels) != 4 or min(self.stage_channels) < 1:
            raise ConfigError("network.stage_channels must be four positive ints")
        if self.global_channels < 1 or self.decoder_channels < 1:
            raise ConfigError("network channel widths must be >= 1")
        if self.input_size % 16:
            raise ConfigError(f"network.input_size must be divisible by 16, got {self.input_size}")


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 8
    lr_max: float = 0.01
    lr_min: float = 1e-5
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    train_size: int = 64
    enable_lsc: bool = True
    enable_ssc: bool = True
    enable_aggm: bool = True
    eval_every: int = 1
    checkpoint_every: int = 0
    lsc: LscConfig = field(default_factory=LscConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)

    def __post_init__(self):
        if not self.lr_min < self.lr_max:
            raise ConfigError("lr_min must be < lr_max")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.train_size % 16:
            raise ConfigError(f"train_size must be divisible by 16, got {self.train_size}")

    # -- (de)serialisation ----------------------------------------------------
    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["objective"]["lambda_q"] = list(self.objective.lambda_q)
        d["network"]["stage_channels"] = list(self.network.stage_channels)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        nested = {"lsc": LscConfig, "objective": ObjectiveConfig, "network": NetworkConfig}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key, typ in nested.items():
            if key in d:
                sub = dict(d[key])
                sub_known = {f.name for f in dataclasses.fields(typ)}
                bad = set(sub) - sub_known
                if bad:
                    raise ConfigError(f"unknown config keys: {sorted(f'{key}.{b}' for b in bad)}")
                d[key] = typ(**sub)
        return cls(**d)


def _coerce(value: str, current: Any) -> Any:
    if isinstance(current, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {value!r}")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, (tuple, list)):
        parsed = json.loads(value) if value.strip().startswith("[") else value.split(",")
        return [type(current[0])(v) if current else float(v) for v in parsed]
    return value


def apply_overrides(cfg: TrainConfig, overrides: list) -> TrainConfig:
    """Apply ``key=value`` strings with dotted keys, e.g. ``lsc.kernel_size=5``."""
    d = cfg.to_dict()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = d
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown config key {key!r}")
            node = node[p]
        leaf = parts[-1]
        if leaf not in node or isinstance(node[leaf], dict):
            raise ConfigError(f"unknown config key {key!r}")
        try:
            node[leaf] = _coerce(value, node[leaf])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    return TrainConfig.from_dict(d)
