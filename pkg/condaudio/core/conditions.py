# condaudio/core/conditions.py
# Control conditions in the common frame-level representation: timestamp class
# objects, pitch and energy contours. Matrix operations accept numpy arrays or
# torch tensors so the same code runs inside the toy model's autograd graph.
from __future__ import annotations

import hashlib
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Protocol, Sequence, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from condaudio.config import ExtractionConfig
from condaudio.core.dsp import (
    Contour,
    QuantizedContour,
    cwt_decompose,
    cwt_reconstruct,
    log_quantize,
    normalize_contour,
)
from condaudio.errors import DataError, ParameterError

logger = logging.getLogger(__name__)

DEFAULT_EMBEDDING_DIM = 64
_WORD = re.compile(r"[a-z0-9]+")


class Event(BaseModel):
    """One labelled segment, serialised as {"class": ..., "onset": ..., "offset": ...}."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    label: str = Field(alias="class")
    onset: float = Field(ge=0)
    offset: float

    @model_validator(mode="after")
    def check_order(self) -> "Event":
        if not self.onset < self.offset:
            raise ValueError(f"onset must be before offset ({self.label}: {self.onset} >= {self.offset})")
        return self

    def to_json(self) -> dict:
        return self.model_dump(by_alias=True)


EventList = List[Event]


@dataclass(frozen=True)
class EventSet:
    classes: tuple

    def __post_init__(self):
        classes = tuple(self.classes)
        if not classes:
            raise ParameterError("event set must contain at least one class")
        if len(set(classes)) != len(classes):
            raise ParameterError("event set contains duplicate class names")
        object.__setattr__(self, "classes", classes)

    def __len__(self) -> int:
        return len(self.classes)

    def index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise ParameterError(f"unknown event class: {name!r}") from None


@dataclass(frozen=True)
class TimestampGrid:
    grid: np.ndarray  # (D, L) in {0, 1}
    frame_rate: float

    def __post_init__(self):
        grid = np.asarray(self.grid)
        if grid.ndim != 2:
            raise ParameterError(f"timestamp grid must be D x L, got shape {grid.shape}")
        if not np.all((grid == 0) | (grid == 1)):
            raise ParameterError("timestamp grid entries must be 0 or 1")
        grid = np.array(grid, dtype=np.uint8, order="C", copy=True)
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @property
    def n_frames(self) -> int:
        return int(self.grid.shape[1])


def _first_frame_at_or_after(t: float, frame_rate: float) -> int:
    # Frame l has its centre at l / frame_rate; rounding absorbs float noise at exact boundaries.
    return int(math.ceil(round(t * frame_rate, 6)))


def events_to_grid(events: Iterable[Event], event_set: EventSet, frame_rate: float, n_frames: int) -> TimestampGrid:
    """grid[d, l] = 1 iff the centre of frame l lies in [onset, offset) of an event of class d."""
    grid = np.zeros((len(event_set), n_frames), dtype=np.uint8)
    duration = n_frames / frame_rate
    for event in events:
        d = event_set.index(event.label)
        if event.offset > duration + 1e-9:
            raise ParameterError(f"event {event.label} ends at {event.offset}s, after the clip end {duration}s")
        start = _first_frame_at_or_after(event.onset, frame_rate)
        stop = min(_first_frame_at_or_after(event.offset, frame_rate), n_frames)
        grid[d, start:stop] = 1
    return TimestampGrid(grid, frame_rate)


def grid_to_events(grid: TimestampGrid, event_set: EventSet) -> EventList:
    """Maximal runs of ones, ordered by onset then class order."""
    if grid.grid.shape[0] != len(event_set):
        raise ParameterError(f"grid has {grid.grid.shape[0]} rows for {len(event_set)} classes")
    events = []
    for d, row in enumerate(grid.grid):
        edges = np.diff(np.concatenate([[0], row.astype(np.int8), [0]]))
        starts = np.flatnonzero(edges == 1)
        stops = np.flatnonzero(edges == -1)
        for start, stop in zip(starts, stops):
            events.append(
                Event(label=event_set.classes[d], onset=start / grid.frame_rate, offset=stop / grid.frame_rate)
            )
    return sorted(events, key=lambda e: (e.onset, event_set.index(e.label)))


def merge_events(events: Iterable[Event]) -> EventList:
    """Union of overlapping or touching same-class events."""
    merged: List[Event] = []
    for event in sorted(events, key=lambda e: (e.label, e.onset)):
        last = merged[-1] if merged else None
        if last is not None and last.label == event.label and event.onset <= last.offset:
            merged[-1] = Event(label=last.label, onset=last.onset, offset=max(last.offset, event.offset))
        else:
            merged.append(event)
    return sorted(merged, key=lambda e: (e.onset, e.label))


class EmbeddingProvider(Protocol):
    dim: int

    def __call__(self, name: str) -> np.ndarray: ...


class HashEmbeddingProvider:
    """Deterministic unit-norm pseudo embeddings seeded from a hash of the name."""

    def __init__(self, dim: int = DEFAULT_EMBEDDING_DIM, salt: str = ""):
        if dim < 1:
            raise ParameterError("embedding dim must be positive")
        self.dim = dim
        self.salt = salt

    def __call__(self, name: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.salt}{name}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        v = rng.standard_normal(self.dim)
        return v / np.linalg.norm(v)


class FileEmbeddingProvider:
    """Embeddings from a text file: one `name<TAB>v1 v2 ...` line per class."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.vectors: Dict[str, np.ndarray] = {}
        try:
            lines = self.path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise DataError(f"cannot read embeddings {self.path}: {e}") from e
        for n, line in enumerate(lines, 1):
            if not line.strip():
                continue
            name, sep, rest = line.partition("\t")
            try:
                vector = np.array([float(x) for x in rest.split()])
            except ValueError:
                vector = np.array([])
            if not sep or vector.size == 0 or not np.all(np.isfinite(vector)):
                raise DataError(f"{self.path}:{n}: expected 'name<TAB>floats'")
            self.vectors[name] = vector
        dims = {v.size for v in self.vectors.values()}
        if len(dims) != 1:
            raise DataError(f"{self.path}: embeddings must share one dimension, found {sorted(dims)}")
        self.dim = dims.pop()

    def __call__(self, name: str) -> np.ndarray:
        try:
            return self.vectors[name]
        except KeyError:
            raise DataError(f"no embedding for class {name!r} in {self.path}") from None


def _like(values: np.ndarray, reference):
    """Convert a numpy array to the array type and dtype of `reference`."""
    if isinstance(reference, np.ndarray):
        return values.astype(reference.dtype, copy=False)
    import torch

    return torch.as_tensor(values, dtype=reference.dtype, device=reference.device)


def embed_labels(event_set: EventSet, provider: EmbeddingProvider, projection):
    """Row d = provider(class_d) @ projection. The per-class projection is the
    1x1 convolution over class embeddings."""
    vectors = np.stack([np.asarray(provider(name), dtype=np.float64) for name in event_set.classes])
    if vectors.shape[1] != projection.shape[0]:
        raise ParameterError(f"embedding dim {vectors.shape[1]} does not match projection rows {projection.shape[0]}")
    return _like(vectors, projection) @ projection


def class_object(label, grid: TimestampGrid):
    """Sum of label rows over the classes active in each frame: grid^T @ label."""
    if label.shape[0] != grid.grid.shape[0]:
        raise ParameterError(f"label has {label.shape[0]} classes, grid has {grid.grid.shape[0]}")
    return _like(grid.grid.T.astype(np.float64), label) @ label


def standardize(condition, table=None, n_frames: Optional[int] = None):
    """L x H control matrix. Class objects pass through; quantized contours are
    looked up in the per-bin embedding table (n_bins x H)."""
    if isinstance(condition, QuantizedContour):
        if table is None:
            raise ParameterError("a bin embedding table is required for contour conditions")
        if table.shape[0] != condition.n_bins:
            raise ParameterError(f"table has {table.shape[0]} rows for {condition.n_bins} bins")
        length = len(condition)
        if isinstance(table, np.ndarray):
            out = table[condition.indices]
        else:
            out = table[_index_tensor(condition.indices, table)]
    else:
        length = condition.shape[0]
        out = condition
    if n_frames is not None and length != n_frames:
        raise ParameterError(f"condition has {length} frames, expected {n_frames}")
    return out


def _index_tensor(indices: np.ndarray, table):
    import torch

    return torch.as_tensor(indices, dtype=torch.long, device=table.device)


def pitch_condition(f0: Contour, config: ExtractionConfig) -> QuantizedContour:
    """Quantized pitch condition. With CWT smoothing the log-F0 contour is
    decomposed and rebuilt, de-normalised and masked back to the voiced frames."""
    values = f0
    if config.pitch_cwt and f0.n_voiced >= 2:
        log_f0 = Contour(np.where(f0.voiced, np.log(np.maximum(f0.values, 1e-12)), 0.0), f0.voiced, f0.frame_rate)
        norm, mean, std = normalize_contour(log_f0)
        rebuilt = cwt_reconstruct(cwt_decompose(norm, config.n_scales), config.n_scales, f0.frame_rate)
        # The zero-mean wavelet drops the DC of the gap-filled contour.
        smooth = np.exp((rebuilt.values + norm.values.mean()) * std + mean)
        values = Contour(np.where(f0.voiced, smooth, 0.0), f0.voiced, f0.frame_rate)
    elif config.pitch_cwt:
        logger.debug("pitch contour has %d voiced frames, quantizing without CWT", f0.n_voiced)
    return log_quantize(values, config.pitch_bins, config.pitch_min, config.pitch_max)


def energy_condition(energy: Contour, config: ExtractionConfig) -> QuantizedContour:
    return log_quantize(energy, config.energy_bins, config.energy_min, config.energy_max)


def timestamp_caption(caption: str, events: Sequence[Event]) -> str:
    """Caption with event timing spelled out, e.g. "Dog from 1.00 to 2.50 and Speech from 3.00 to 4.00."."""
    if not events:
        return caption
    parts = [
        f"{e.label[:1].upper()}{e.label[1:]} from {e.onset:.2f} to {e.offset:.2f}"
        for e in sorted(events, key=lambda e: (e.onset, e.label))
    ]
    timing = " and ".join(parts) + "."
    caption = caption.strip()
    if not caption:
        return timing
    if caption[-1] not in ".!?":
        caption += "."
    return f"{caption} {timing}"


def tokenize(caption: str) -> List[str]:
    return _WORD.findall(caption.lower())


def embed_text(caption: str, provider: EmbeddingProvider, n_tokens: int) -> np.ndarray:
    """N x E token embeddings of a caption, truncated or zero-padded to n_tokens."""
    if n_tokens < 1:
        raise ParameterError("n_tokens must be positive")
    out = np.zeros((n_tokens, provider.dim))
    for i, word in enumerate(tokenize(caption)[:n_tokens]):
        out[i] = provider(word)
    return out
