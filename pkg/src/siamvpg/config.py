"""Run configuration: loss weights, model/training hyperparameters, and the
per-dataset profiles that pre-populate them."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .compose import ComposeConfig


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class LossWeights:
    screg: float = 2.0
    oga: float = 1.0
    csc: float = 10.0
    cb: float = 1.0
    ar: float = 1.0
    pa: float = 1.0
    beta: float = 0.5

    def __post_init__(self):
        for name in ("screg", "oga", "csc", "cb", "ar", "pa"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")
        if not (0.0 < self.beta < 1.0):
            raise ConfigError(f"beta must be in (0, 1), got {self.beta}")


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 256
    heads: int = 8
    encoder_layers: int = 3
    decoder_layers: int = 3
    ffn_dim: int = 512
    gru_hidden: int = 128
    dropout: float = 0.1

    def __post_init__(self):
        if self.hidden_dim % self.heads != 0:
            raise ConfigError("hidden_dim must be divisible by heads")
        if self.hidden_dim % 4 != 0:
            raise ConfigError("hidden_dim must be divisible by 4 (box embeddings)")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "ws"  # ws | ss | fs
    seed: int = 0
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 20
    t_clips: int = 256
    grad_clip: float = 1.0
    labeled_fraction: float = 0.3
    num_concepts: int = 100
    model_selection: str = "best-val"  # "best-val" falls back to final without a val split
    rrs_stride_range: tuple[float, float] = (0.75, 3.0)
    rbs_fraction: float = 0.1
    iou_thresholds: tuple[float, ...] = (0.3, 0.5, 0.7)
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.mode not in ("ws", "ss", "fs"):
            raise ConfigError(f"mode must be ws, ss or fs, got {self.mode!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0.0 <= self.labeled_fraction <= 1.0):
            raise ConfigError("labeled_fraction must be in [0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.model_selection not in ("final", "best-val"):
            raise ConfigError(
                f"model_selection must be 'final' or 'best-val', got {self.model_selection!r}")

    def compose_config(self) -> ComposeConfig:
        return ComposeConfig(
            t_clips=self.t_clips,
            rrs_stride_range=self.rrs_stride_range,
            rbs_fraction=self.rbs_fraction,
        )

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "t_clips": self.t_clips,
            "grad_clip": self.grad_clip,
            "labeled_fraction": self.labeled_fraction,
            "num_concepts": self.num_concepts,
            "model_selection": self.model_selection,
            "rrs_stride_range": list(self.rrs_stride_range),
            "rbs_fraction": self.rbs_fraction,
            "iou_thresholds": list(self.iou_thresholds),
            "model": {
                "hidden_dim": self.model.hidden_dim,
                "heads": self.model.heads,
                "encoder_layers": self.model.encoder_layers,
                "decoder_layers": self.model.decoder_layers,
                "ffn_dim": self.model.ffn_dim,
                "gru_hidden": self.model.gru_hidden,
                "dropout": self.model.dropout,
            },
            "weights": {
                "screg": self.weights.screg,
                "oga": self.weights.oga,
                "csc": self.weights.csc,
                "cb": self.weights.cb,
                "ar": self.weights.ar,
                "pa": self.weights.pa,
                "beta": self.weights.beta,
            },
        }


# Defaults by dataset family: clip count T, batch size, boundary-shift
# fraction p, and re-sampling stride range. The synthetic profile is the
# desk-scale variant the test harness trains on.
PROFILES: dict[str, dict] = {
    "activitynet-like": {
        "t_clips": 256, "batch_size": 32, "rbs_fraction": 0.1,
        "rrs_stride_range": [0.75, 3.0], "iou_thresholds": [0.3, 0.5, 0.7],
    },
    "charades-like": {
        "t_clips": 128, "batch_size": 32, "rbs_fraction": 0.175,
        "rrs_stride_range": [1.0, 3.0], "iou_thresholds": [0.3, 0.5, 0.7],
    },
    "tacos-like": {
        "t_clips": 512, "batch_size": 16, "rbs_fraction": 0.1,
        "rrs_stride_range": [1.0, 15.0], "iou_thresholds": [0.1, 0.3, 0.5],
    },
    "synthetic": {
        "t_clips": 64, "batch_size": 16, "rbs_fraction": 0.1,
        "rrs_stride_range": [1.0, 6.0], "iou_thresholds": [0.3, 0.5, 0.7],
        "epochs": 30, "learning_rate": 3e-4,
        "model": {
            "hidden_dim": 128, "heads": 8, "encoder_layers": 2,
            "decoder_layers": 3, "ffn_dim": 256, "gru_hidden": 96,
            "dropout": 0.0,
        },
        "weights": {"screg": 2.0, "oga": 1.0, "csc": 0.5, "cb": 1.0,
                    "ar": 1.0, "pa": 2.0, "beta": 0.3},
    },
}


def train_config_from_dict(raw: dict) -> TrainConfig:
    """Build a TrainConfig from a parsed config file, applying the profile's
    defaults first and the file's explicit keys on top."""
    raw = copy.deepcopy(raw)
    profile = raw.pop("profile", None)
    merged: dict = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
        merged = copy.deepcopy(PROFILES[profile])
    for key, value in raw.items():
        if key in ("model", "weights") and isinstance(value, dict):
            merged.setdefault(key, {}).update(value)
        else:
            merged[key] = value

    model_kwargs = merged.pop("model", {})
    weight_kwargs = merged.pop("weights", {})
    try:
        model = ModelConfig(**model_kwargs)
        weights = LossWeights(**weight_kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad model/weights key: {exc}") from exc
    for seq_key in ("rrs_stride_range", "iou_thresholds"):
        if seq_key in merged:
            merged[seq_key] = tuple(merged[seq_key])
    try:
        return TrainConfig(model=model, weights=weights, **merged)
    except TypeError as exc:
        raise ConfigError(f"bad config key: {exc}") from exc


def load_train_config(path: Path | str) -> TrainConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return train_config_from_dict(raw)


def config_hash(config: TrainConfig) -> str:
    """Stable content hash of a resolved config."""
    canon = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()
