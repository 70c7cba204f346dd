# condaudio/ldm/encoder.py
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Union

import torch
import torch.nn.functional as F
from torch import nn

from condaudio.config import CONDITION_TYPES, ToyConfig
from condaudio.core.conditions import (
    EventSet,
    HashEmbeddingProvider,
    TimestampGrid,
    class_object,
    embed_labels,
    grid_to_events,
    standardize,
)
from condaudio.core.dsp import QuantizedContour
from condaudio.errors import ParameterError

logger = logging.getLogger(__name__)

ControlValue = Union[TimestampGrid, QuantizedContour]
BOX_FREQS = 8


@dataclass(frozen=True)
class ControlCondition:
    """One sample's control condition at latent frame resolution."""

    type: str
    value: ControlValue

    def __post_init__(self):
        if self.type not in CONDITION_TYPES:
            raise ParameterError(f"unknown condition type: {self.type!r}")
        expected = TimestampGrid if self.type == "timestamp" else QuantizedContour
        if not isinstance(self.value, expected):
            raise ParameterError(f"{self.type} condition needs a {expected.__name__}")

    @property
    def type_id(self) -> int:
        return CONDITION_TYPES.index(self.type)


def sinusoidal_embedding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """(n,) positions -> (n, dim) sin/cos features, float64."""
    positions = positions.to(torch.float64)
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    angles = positions[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros(positions.shape[0], 1, dtype=torch.float64)], dim=1)
    return emb


def normal_(p: torch.Tensor, std: float, generator: torch.Generator) -> None:
    with torch.no_grad():
        p.copy_(torch.randn(p.shape, generator=generator, dtype=torch.float64).to(p.dtype) * std)


def reset_layers(module: nn.Module, generator: torch.Generator) -> None:
    """Seeded init for the stock layers inside `module`, in registration order."""
    for m in module.modules():
        if isinstance(m, nn.Linear):
            normal_(m.weight, 1.0 / math.sqrt(m.in_features), generator)
        elif isinstance(m, nn.Conv1d):
            normal_(m.weight, 1.0 / math.sqrt(m.in_channels * m.kernel_size[0]), generator)
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
        else:
            continue
        if getattr(m, "bias", None) is not None:
            nn.init.zeros_(m.bias)


def fourier_features(x: torch.Tensor, n_freqs: int = BOX_FREQS) -> torch.Tensor:
    """(..., k) coordinates in [0, 1] -> (..., 2 * k * n_freqs) sin/cos features at octave frequencies."""
    freqs = math.pi * 2.0 ** torch.arange(n_freqs, dtype=x.dtype)
    angles = x[..., None] * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1).flatten(-2)


class BoxEncoder(nn.Module):
    """One token per timestamp event, GLIGEN style.

    token = MLP([label row of the event class || fourier(onset / T, offset / T)]),
    padded to max_boxes with a learned null token. Events beyond max_boxes are
    dropped in onset order."""

    def __init__(self, config: ToyConfig):
        super().__init__()
        H = config.hidden
        self.max_boxes = config.max_boxes
        box_dim = 2 * 2 * BOX_FREQS
        self.mlp = nn.Sequential(nn.Linear(H + box_dim, H), nn.SiLU(), nn.Linear(H, H), nn.SiLU(), nn.Linear(H, H))
        self.null_box = nn.Parameter(torch.empty(H))

    def reset_parameters(self, generator: torch.Generator) -> None:
        reset_layers(self.mlp, generator)
        normal_(self.null_box, 1.0, generator)

    def boxes(self, grid: TimestampGrid, event_set: EventSet) -> tuple:
        """Class indices and normalised (onset, offset) pairs of the grid's events."""
        duration = grid.n_frames / grid.frame_rate
        events = grid_to_events(grid, event_set)
        if len(events) > self.max_boxes:
            logger.warning("%d timestamp events, keeping the first %d", len(events), self.max_boxes)
            events = events[: self.max_boxes]
        classes = [event_set.index(e.label) for e in events]
        spans = [(e.onset / duration, e.offset / duration) for e in events]
        return classes, spans

    def forward(self, grids: Sequence[TimestampGrid], event_set: EventSet, label: torch.Tensor) -> torch.Tensor:
        """(B, max_boxes, H) tokens for a batch of grids; label is the (D, H) class embedding."""
        out = self.null_box.expand(len(grids), self.max_boxes, -1).clone()
        for b, grid in enumerate(grids):
            classes, spans = self.boxes(grid, event_set)
            if not classes:
                continue
            coords = torch.as_tensor(spans, dtype=label.dtype)
            features = torch.cat([label[classes], fourier_features(coords)], dim=-1)
            out[b, : len(classes)] = self.mlp(features)
        return out


class ControlEncoder(nn.Module):
    """Lifts timestamp, pitch and energy conditions into L x H control embeddings,
    or timestamps alone into max_boxes x H box tokens when the box encoder is on.

    Timestamp grids go through the label projection and the class-object sum;
    contours through per-bin embedding tables. A shared MLP over the
    positionally embedded matrix follows, then the condition type's CLS row is
    added. Token groups for the Fusion-Net come from strided convolutions."""

    def __init__(self, config: ToyConfig):
        super().__init__()
        H = config.hidden
        self.n_frames = config.latent_frames
        self.strides = list(config.strides)
        self.event_set = EventSet(tuple(config.event_classes))
        self.label_provider = HashEmbeddingProvider(config.label_dim, salt="label:")

        self.label_projection = nn.Parameter(torch.empty(config.label_dim, H))
        self.pitch_table = nn.Parameter(torch.empty(config.n_bins, H))
        self.energy_table = nn.Parameter(torch.empty(config.n_bins, H))
        self.position = nn.Parameter(torch.empty(config.latent_frames, H))
        self.mlp = nn.Sequential(nn.Linear(H, H), nn.GELU(), nn.Linear(H, H))
        self.cls = nn.Parameter(torch.empty(len(CONDITION_TYPES), H))
        self.downsamplers = nn.ModuleList(nn.Conv1d(H, H, kernel_size=s, stride=s) for s in self.strides)
        self.null_control = nn.Parameter(torch.empty(H))
        self.box_encoder = BoxEncoder(config) if config.timestamp_encoder == "box" else None
        self.n_tokens = config.max_boxes if self.box_encoder is not None else self.n_frames

    def reset_parameters(self, generator: torch.Generator) -> None:
        H = self.cls.shape[1]
        normal_(self.label_projection, 1.0 / math.sqrt(self.label_projection.shape[0]), generator)
        normal_(self.pitch_table, 1.0, generator)
        normal_(self.energy_table, 1.0, generator)
        with torch.no_grad():
            self.position.copy_(sinusoidal_embedding(torch.arange(self.n_frames), H).to(self.position.dtype))
        reset_layers(self.mlp, generator)
        normal_(self.cls, 1.0, generator)
        reset_layers(self.downsamplers, generator)
        normal_(self.null_control, 1.0, generator)
        if self.box_encoder is not None:
            self.box_encoder.reset_parameters(generator)

    def label_embedding(self) -> torch.Tensor:
        return embed_labels(self.event_set, self.label_provider, self.label_projection)

    def standardize(self, condition: ControlCondition, label: torch.Tensor = None) -> torch.Tensor:
        if condition.type == "timestamp":
            if label is None:
                label = self.label_embedding()
            matrix = class_object(label, condition.value)
            return standardize(matrix, n_frames=self.n_frames)
        table = self.pitch_table if condition.type == "pitch" else self.energy_table
        return standardize(condition.value, table, n_frames=self.n_frames)

    def encode(self, standardized: torch.Tensor, type_ids: Union[Sequence[int], torch.Tensor]) -> torch.Tensor:
        """tokens = MLP(standardized + position) + CLS[type_id]; (B, L, H) in and out."""
        type_ids = torch.as_tensor(type_ids, dtype=torch.long)
        if type_ids.numel() and (int(type_ids.min()) < 0 or int(type_ids.max()) >= len(CONDITION_TYPES)):
            raise ParameterError(f"unknown condition type id in {type_ids.tolist()}")
        if standardized.shape[-2] != self.n_frames:
            raise ParameterError(f"control has {standardized.shape[-2]} frames, expected {self.n_frames}")
        return self.mlp(standardized + self.position) + self.cls[type_ids][:, None, :]

    def forward(self, controls: Sequence[ControlCondition], drop: torch.Tensor = None) -> torch.Tensor:
        label = None
        if any(c.type == "timestamp" for c in controls):
            label = self.label_embedding()
        if self.box_encoder is not None:
            tokens = self.encode_boxes(controls, label)
        else:
            std = torch.stack([self.standardize(c, label) for c in controls])
            tokens = self.encode(std, [c.type_id for c in controls])
        if drop is not None and bool(drop.any()):
            null = self.null_control.expand_as(tokens)
            tokens = torch.where(drop[:, None, None], null, tokens)
        return tokens

    def encode_boxes(self, controls: Sequence[ControlCondition], label: torch.Tensor = None) -> torch.Tensor:
        """Box tokens + CLS[timestamp]; (B, max_boxes, H)."""
        if any(c.type != "timestamp" for c in controls):
            raise ParameterError("the box encoder takes timestamp conditions only")
        if label is None:
            label = self.label_embedding()
        tokens = self.box_encoder([c.value for c in controls], self.event_set, label)
        return tokens + self.cls[CONDITION_TYPES.index("timestamp")]

    def null_embedding(self, batch_size: int) -> torch.Tensor:
        return self.null_control.expand(batch_size, self.n_tokens, -1)

    def downsample(self, emb: torch.Tensor) -> List[torch.Tensor]:
        """Token group p: kernel = stride = strides[p] over time, ceil(L / stride) tokens.
        Box tokens have no time axis; every layer sees all of them."""
        if self.box_encoder is not None:
            return [emb] * len(self.strides)
        x = emb.transpose(1, 2)
        groups = []
        for stride, conv in zip(self.strides, self.downsamplers):
            pad = (-x.shape[-1]) % stride
            groups.append(conv(F.pad(x, (0, pad))).transpose(1, 2))
        return groups
