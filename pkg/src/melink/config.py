"""Run configuration: defaults, JSON loading, CLI overrides, hashing."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .hashing import fnv1a64_hex


@dataclass
class TrainConfig:
    # dimensions
    d: int = 512
    d_obj: int = 768
    d_face: int = 512
    heads: int = 8
    n_queries: int = 4
    # optimization
    dropout: float = 0.4
    epochs: int = 300
    max_steps: int | None = None
    eval_every_steps: int = 2000
    batch_size: int = 64
    lr: float = 5e-5
    weight_decay: float = 0.001
    margin: float = 0.5
    beta: float = 0.5
    tau: float = 1.0
    # retrieval / negatives
    lam: int = 100
    k_hard: int = 1
    negatives_refresh: str = "step"  # "step" | "epoch"
    # reproducibility
    seed: int = 0
    encoder_seed: int = 42
    # splits (test split takes the remainder)
    split_train: float = 0.8
    split_dev: float = 0.1
    # ablation switches
    use_mt: bool = True
    use_mv: bool = True
    use_ms: bool = True
    use_face: bool = True
    use_alignment: bool = True
    # sign-flipped triplet variant (comparison only; does not train)
    invert_triplet: bool = False

    def validate(self) -> "TrainConfig":
        if self.d % self.heads != 0:
            raise ConfigError(f"d={self.d} not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0,1); got {self.dropout}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive; got {self.tau}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0; got {self.beta}")
        if self.margin < 0:
            raise ConfigError(f"margin must be >= 0; got {self.margin}")
        if self.lam < 1:
            raise ConfigError(f"lam must be >= 1; got {self.lam}")
        if self.negatives_refresh not in ("step", "epoch"):
            raise ConfigError(
                f"negatives_refresh must be 'step' or 'epoch'; got {self.negatives_refresh!r}")
        if not (0.0 < self.split_train <= 1.0) or self.split_dev < 0.0 \
                or self.split_train + self.split_dev > 1.0 + 1e-9:
            raise ConfigError(
                f"bad split fractions: train={self.split_train} dev={self.split_dev}")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        return fnv1a64_hex(canonical_json(self.to_dict()).encode("utf-8"))


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_from_dict(data: dict) -> TrainConfig:
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return TrainConfig(**data).validate()


def load_config(path: str | Path | None, overrides: dict | None = None) -> TrainConfig:
    """Config from a JSON file (optional) with CLI overrides applied on top."""
    data: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_dict(data)
