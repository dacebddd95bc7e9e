import json
import logging
import os
from enum import Enum
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import StorageError
from .models import DescriptorMode, Distance, ErrorCodes, Method

logger = logging.getLogger(__name__)

LOG_LEVEL_ENV = "REACT_SG_LOG_LEVEL"
DEFAULT_DESCRIPTOR_DIM = 192
DEFAULT_EMBEDDING_DIM = 64


class MedianMode(str, Enum):
    MEDIAN_OF_EMBEDDINGS = "median_of_embeddings"


class AugmentConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    enabled: bool = True
    mode: DescriptorMode = DescriptorMode.ABSTRACT
    patch_height: int = Field(default=8, ge=1)
    patch_width: int = Field(default=8, ge=1)
    patch_channels: int = Field(default=3, ge=1)
    flip: bool = True
    max_rotation_deg: float = Field(default=10.0, ge=0.0)
    noise_amplitude: float = Field(default=0.05, ge=0.0)
    occlusion_fraction: float = Field(default=0.1, ge=0.0, lt=1.0)


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    epochs: int = Field(default=30, ge=1)
    learning_rate: float = Field(default=0.001, gt=0.0)
    batch_size: int = Field(default=64, ge=2)
    seed: int = 0
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(default=1e-8, gt=0.0)
    views_per_label: int = Field(default=4, ge=2)
    layer_dims: tuple[int, ...] = (
        DEFAULT_DESCRIPTOR_DIM,
        128,
        DEFAULT_EMBEDDING_DIM,
    )
    normalize_output: bool = True
    margin_alpha: float = Field(default=1.0, gt=0.0)
    augmentation: AugmentConfig = Field(default_factory=AugmentConfig)

    @model_validator(mode="after")
    def _check_layers(self) -> "TrainConfig":
        min_layers = 2
        if len(self.layer_dims) < min_layers or min(self.layer_dims) < 1:
            msg = f"layer_dims must hold >= 2 positive sizes: {self.layer_dims}"
            raise ValueError(msg)
        return self


class ClusterConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma: float = Field(default=1.0, ge=0.0)
    median_mode: MedianMode = MedianMode.MEDIAN_OF_EMBEDDINGS


class MatchConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma: float = Field(default=1.0, ge=0.0)
    distance: Distance = Distance.EUCLIDEAN


class AssociationConfig(BaseModel):
    """Gating used to attach observations to existing object nodes."""

    model_config = ConfigDict(frozen=True)

    radius: float = Field(default=0.1, gt=0.0)
    descriptor_gate: float = Field(default=1.0, gt=0.0)


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    seed: int | None = None
    gamma: float = Field(default=1.0, ge=0.0)
    method: Method = Method.REACT
    descriptor_mode: DescriptorMode = DescriptorMode.ABSTRACT
    log_level: str = "WARNING"
    train: TrainConfig = Field(default_factory=TrainConfig)
    association: AssociationConfig = Field(default_factory=AssociationConfig)

    def cluster_config(self) -> ClusterConfig:
        return ClusterConfig(gamma=self.gamma)

    def match_config(self) -> MatchConfig:
        return MatchConfig(gamma=self.gamma)


def _deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _read_config_file(config_path: str) -> dict[str, Any]:
    try:
        with Path(config_path).open() as f:
            return json.load(f)
    except Exception as e:
        msg = f"Failed to read config file {config_path}: {e!s}"
        raise StorageError(msg, ErrorCodes.FILE_READ_ERROR) from e


def load_run_config(
    config_path: str | None = None, overrides: dict[str, Any] | None = None
) -> RunConfig:
    """Resolve flags > config file > defaults into one RunConfig."""
    resolved: dict[str, Any] = {}
    env_level = os.environ.get(LOG_LEVEL_ENV)
    if env_level:
        resolved["log_level"] = env_level
    if config_path:
        resolved = _deep_merge(resolved, _read_config_file(config_path))
    if overrides:
        flags = {k: v for k, v in overrides.items() if v is not None}
        resolved = _deep_merge(resolved, flags)
    if "seed" in resolved and "seed" not in resolved.get("train", {}):
        resolved.setdefault("train", {})["seed"] = resolved["seed"]
    config = RunConfig.model_validate(resolved)
    logger.info("resolved config: %s", config.model_dump_json())
    return config
