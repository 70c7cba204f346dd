# condaudio/config.py
# Every configurable stage is a pydantic model that loads from one human-readable
# key=value file (parsed with python-dotenv) and has a stable digest.
from __future__ import annotations

import hashlib
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Type, TypeVar

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from condaudio.errors import ParameterError

ConditionType = Literal["timestamp", "pitch", "energy"]
CONDITION_TYPES: tuple[str, ...] = ("timestamp", "pitch", "energy")

C = TypeVar("C", bound="KeyValueConfig")


def _split_csv(value: Any) -> Any:
    if isinstance(value, str):
        return [part.strip() for part in value.split(",") if part.strip()]
    return value


def derive_seed(seed: int, stream: str) -> int:
    """Named sub-stream of a run seed; streams are independent of each other."""
    digest = hashlib.sha256(f"{int(seed)}:{stream}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


class KeyValueConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    def digest(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()

    def to_key_values(self) -> str:
        lines = []
        for key, value in self.model_dump().items():
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key.upper()}={value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_key_values(cls: Type[C], values: Dict[str, Optional[str]]) -> C:
        data = {k.lower(): v for k, v in values.items() if v is not None}
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ParameterError(f"invalid {cls.__name__}: {e}") from e

    @classmethod
    def load(cls: Type[C], path: Optional[str | Path] = None, **overrides: Any) -> C:
        data: Dict[str, Any] = {}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ParameterError(f"config file not found: {p}")
            data.update({k.lower(): v for k, v in dotenv_values(p).items() if v is not None})
        data.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ParameterError(f"invalid {cls.__name__} ({path or 'defaults'}): {e}") from e


class ExtractionConfig(KeyValueConfig):
    """Frame geometry, F0 tracking, CWT and quantization settings."""

    sample_rate: int = Field(16000, ge=8000)
    window_size: int = Field(1024, gt=0)
    hop: int = Field(160, gt=0)
    clip_seconds: float = Field(10.0, gt=0)

    f_min: float = Field(40.0, gt=0)
    f_max: float = Field(1600.0, gt=0)
    voicing_threshold: float = Field(0.3, ge=0, le=1)
    trough_threshold: float = Field(0.1, gt=0, le=1)

    n_scales: int = Field(10, ge=1)
    pitch_cwt: bool = True

    pitch_bins: int = Field(256, ge=2)
    pitch_min: float = Field(40.0, gt=0)
    pitch_max: float = Field(1600.0, gt=0)
    energy_bins: int = Field(256, ge=2)
    energy_min: float = Field(1e-4, gt=0)
    energy_max: float = Field(512.0, gt=0)

    @model_validator(mode="after")
    def check_ranges(self) -> "ExtractionConfig":
        if self.hop > self.window_size:
            raise ValueError("hop must not exceed window_size")
        if not self.f_min < self.f_max < self.sample_rate / 2:
            raise ValueError("need f_min < f_max < sample_rate / 2")
        if not self.pitch_min < self.pitch_max:
            raise ValueError("need pitch_min < pitch_max")
        if not self.energy_min < self.energy_max:
            raise ValueError("need energy_min < energy_max")
        return self

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop

    @property
    def clip_samples(self) -> int:
        return int(round(self.clip_seconds * self.sample_rate))

    @property
    def n_frames(self) -> int:
        return max(1, math.ceil(self.clip_samples / self.hop))


class DatasetConfig(ExtractionConfig):
    event_set: List[str] = Field(default_factory=list)

    @field_validator("event_set", mode="before")
    @classmethod
    def split_event_set(cls, v: Any) -> Any:
        return _split_csv(v)

    @field_validator("event_set")
    @classmethod
    def unique_classes(cls, v: List[str]) -> List[str]:
        if len(set(v)) != len(v):
            raise ValueError("event_set contains duplicate class names")
        return v

    def extraction(self) -> ExtractionConfig:
        return ExtractionConfig.model_validate(self.model_dump(exclude={"event_set"}))


class ToyConfig(KeyValueConfig):
    """Desk-scale latent diffusion model with control encoder and Fusion-Net."""

    seed: int = 7

    latent_frames: int = Field(64, ge=1)
    latent_dim: int = Field(16, ge=1)
    mel_bins: int = Field(64, ge=1)
    hidden: int = Field(64, ge=1)
    n_heads: int = Field(4, ge=1)
    ff_mult: int = Field(2, ge=1)
    n_layers: int = Field(3, ge=1)
    strides: List[int] = Field(default_factory=lambda: [2, 4, 8])

    text_dim: int = Field(64, ge=1)
    text_tokens: int = Field(8, ge=1)
    label_dim: int = Field(64, ge=1)
    event_classes: List[str] = Field(default_factory=lambda: ["speech", "dog", "siren", "music"])
    n_bins: int = Field(256, ge=2)

    fusion_mode: Literal["attention", "add"] = "attention"
    locality: float = Field(0.5, ge=0)
    condition_types: List[ConditionType] = Field(default_factory=lambda: list(CONDITION_TYPES))
    timestamp_encoder: Literal["frame", "box"] = "frame"
    max_boxes: int = Field(8, ge=1)
    use_text: bool = True
    caption_mode: Literal["plain", "timestamp"] = "plain"
    uncond_drops: Literal["both", "control"] = "both"

    timesteps: int = Field(200, ge=1)
    beta_start: float = Field(1e-4, gt=0, lt=1)
    beta_end: float = Field(2e-2, gt=0, lt=1)

    guidance_dropout: float = Field(0.1, ge=0, le=1)
    guidance_scale: float = Field(5.0, ge=0)
    sample_steps: int = Field(50, ge=1)

    optimizer: Literal["sgd", "adamw"] = "adamw"
    learning_rate: float = Field(3e-3, ge=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(0.0, ge=0)
    grad_clip: float = Field(1.0, ge=0)
    batch_size: int = Field(32, ge=1)
    train_steps: int = Field(500, ge=0)

    probe_samples: int = Field(32, ge=2)
    sweep_omegas: List[float] = Field(default_factory=lambda: [1.0, 3.0, 5.0, 10.0])
    sweep_steps: List[int] = Field(default_factory=lambda: [10, 50, 100, 200])

    @field_validator("strides", "event_classes", "condition_types", "sweep_omegas", "sweep_steps", mode="before")
    @classmethod
    def split_lists(cls, v: Any) -> Any:
        return _split_csv(v)

    @model_validator(mode="after")
    def check_shapes(self) -> "ToyConfig":
        if len(self.strides) != self.n_layers:
            raise ValueError("one control-token stride per backbone layer is required")
        if any(s < 1 for s in self.strides):
            raise ValueError("strides must be positive")
        if self.hidden % self.n_heads:
            raise ValueError("hidden must be divisible by n_heads")
        if self.mel_bins < self.latent_dim:
            raise ValueError("mel_bins must be at least latent_dim")
        if self.beta_start > self.beta_end:
            raise ValueError("betas must be nondecreasing")
        if not self.condition_types:
            raise ValueError("condition_types must not be empty")
        if self.timestamp_encoder == "box":
            if self.condition_types != ["timestamp"]:
                raise ValueError("the box timestamp encoder takes timestamp conditions only")
            if self.fusion_mode != "attention":
                raise ValueError("box tokens need attention fusion")
        if not self.event_classes or len(set(self.event_classes)) != len(self.event_classes):
            raise ValueError("event_classes must be non-empty and unique")
        if any(s > self.timesteps for s in self.sweep_steps) or self.sample_steps > self.timesteps:
            raise ValueError("sampling steps cannot exceed timesteps")
        return self


class RunConfig(BaseModel):
    """What a command echoes before it starts work."""

    model_config = ConfigDict(extra="forbid")

    command: str
    seed: int
    paths: Dict[str, str] = Field(default_factory=dict)
    frame: Optional[Dict[str, Any]] = None
    schedule: Optional[Dict[str, Any]] = None
    omega: Optional[float] = None
    steps: Optional[int] = None
