# condaudio/core/audio.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import soundfile as sf

from condaudio.errors import DataError, ParameterError

logger = logging.getLogger(__name__)

MIN_SAMPLE_RATE = 8000


@dataclass(frozen=True)
class AudioBuffer:
    """Mono float32 samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float32, order="C", copy=True).reshape(-1)
        if self.sample_rate < MIN_SAMPLE_RATE:
            raise ParameterError(f"sample_rate must be >= {MIN_SAMPLE_RATE}, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise ParameterError("audio samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def resample_linear(audio: AudioBuffer, sample_rate: int) -> AudioBuffer:
    if audio.sample_rate == sample_rate:
        return audio
    logger.warning("resampling %d Hz -> %d Hz with linear interpolation", audio.sample_rate, sample_rate)
    n_out = int(round(len(audio) * sample_rate / audio.sample_rate))
    if n_out == 0 or len(audio) == 0:
        return AudioBuffer(np.zeros(n_out, dtype=np.float32), sample_rate)
    t_out = np.arange(n_out, dtype=np.float64) / sample_rate
    t_in = np.arange(len(audio), dtype=np.float64) / audio.sample_rate
    return AudioBuffer(np.interp(t_out, t_in, audio.samples).astype(np.float32), sample_rate)


def fit_length(audio: AudioBuffer, n_samples: int) -> AudioBuffer:
    """Pad with trailing silence or centre-crop to exactly n_samples."""
    n = len(audio)
    if n == n_samples:
        return audio
    if n < n_samples:
        return AudioBuffer(np.pad(audio.samples, (0, n_samples - n)), audio.sample_rate)
    start = (n - n_samples) // 2
    return AudioBuffer(audio.samples[start:start + n_samples], audio.sample_rate)


def read_wav(path: str | Path, sample_rate: int | None = None) -> AudioBuffer:
    """Read a 16-bit PCM or 32-bit float WAV file as mono float32."""
    try:
        data, sr = sf.read(str(path), dtype="float32", always_2d=True)
    except (RuntimeError, sf.LibsndfileError, OSError) as e:
        raise DataError(f"cannot read audio {path}: {e}") from e
    mono = data.mean(axis=1) if data.shape[1] > 1 else data[:, 0]
    audio = AudioBuffer(np.clip(mono, -1.0, 1.0), sr)
    if sample_rate is not None:
        audio = resample_linear(audio, sample_rate)
    return audio


def write_wav(path: str | Path, audio: AudioBuffer, subtype: str = "PCM_16") -> None:
    sf.write(str(path), audio.samples, audio.sample_rate, subtype=subtype)
