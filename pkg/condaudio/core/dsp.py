# condaudio/core/dsp.py
# Deterministic signal-processing primitives. Every function is pure: inputs are
# never mutated and returned arrays are read-only.
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.signal import fftconvolve, get_window
from scipy.special import gamma

from condaudio.core.audio import AudioBuffer
from condaudio.errors import ParameterError

logger = logging.getLogger(__name__)

# Mexican-hat (second derivative of Gaussian) normalisation, 1/sqrt(Gamma(m + 1/2)) with m = 2.
_DOG2_NORM = 1.0 / math.sqrt(gamma(2.5))
SMALLEST_SCALE = 2.0


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, order="C", copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ComplexSpectrogram:
    frames: np.ndarray  # (L, window_size // 2 + 1) complex128
    window_size: int
    hop: int
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop


@dataclass(frozen=True)
class Contour:
    """Per-frame scalar series. Unvoiced frames carry value 0."""

    values: np.ndarray
    voiced: np.ndarray
    frame_rate: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        voiced = np.asarray(self.voiced, dtype=bool).reshape(-1)
        if values.shape != voiced.shape:
            raise ParameterError(f"values/voiced length mismatch: {values.shape[0]} != {voiced.shape[0]}")
        if not np.all(np.isfinite(values)):
            raise ParameterError("contour values must be finite")
        if np.any(values[~voiced] != 0.0):
            raise ParameterError("unvoiced frames must carry value 0")
        if self.frame_rate <= 0:
            raise ParameterError("frame_rate must be positive")
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "voiced", _frozen(voiced))
        object.__setattr__(self, "frame_rate", float(self.frame_rate))

    @classmethod
    def dense(cls, values: np.ndarray, frame_rate: float) -> "Contour":
        values = np.asarray(values, dtype=np.float64)
        return cls(values, np.ones(values.shape, dtype=bool), frame_rate)

    def __len__(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_voiced(self) -> int:
        return int(self.voiced.sum())


@dataclass(frozen=True)
class QuantizedContour:
    indices: np.ndarray
    n_bins: int
    v_min: float
    v_max: float
    frame_rate: float = 100.0

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        if self.n_bins < 2:
            raise ParameterError(f"n_bins must be >= 2, got {self.n_bins}")
        if indices.size and (indices.min() < 0 or indices.max() >= self.n_bins):
            raise ParameterError(f"indices must lie in [0, {self.n_bins - 1}]")
        object.__setattr__(self, "indices", _frozen(indices))

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    def normalized(self) -> np.ndarray:
        """Indices mapped onto [0, 1] (bin / (n_bins - 1))."""
        return self.indices / float(self.n_bins - 1)


def frame_count(n_samples: int, hop: int) -> int:
    """Frame l is centred on sample l * hop."""
    return max(1, math.ceil(n_samples / hop))


def _centred_frames(samples: np.ndarray, frame_length: int, hop: int, pad_mode: str) -> np.ndarray:
    n = samples.shape[0]
    if n < frame_length:
        frames = np.zeros((1, frame_length), dtype=np.float64)
        frames[0, :n] = samples
        return frames
    half = frame_length // 2
    padded = np.pad(samples.astype(np.float64), (half, frame_length - half), mode=pad_mode)
    view = np.lib.stride_tricks.sliding_window_view(padded, frame_length)
    return view[::hop][: frame_count(n, hop)]


def stft(audio: AudioBuffer, window_size: int = 1024, hop: int = 160) -> ComplexSpectrogram:
    if not (window_size >= hop > 0):
        raise ParameterError(f"need window_size >= hop > 0, got window_size={window_size}, hop={hop}")
    if len(audio) == 0:
        raise ParameterError("empty input")
    window = get_window("hann", window_size, fftbins=True)
    frames = _centred_frames(audio.samples, window_size, hop, "reflect")
    spec = np.fft.rfft(frames * window, n=window_size, axis=1)
    return ComplexSpectrogram(_frozen(spec), window_size, hop, audio.sample_rate)


def frame_energy(spec: ComplexSpectrogram) -> Contour:
    """L2 norm of each STFT frame's magnitudes (linear amplitude, not mel)."""
    values = np.sqrt(np.sum(np.abs(spec.frames) ** 2, axis=1))
    return Contour.dense(values, spec.frame_rate)


def _difference(frames: np.ndarray, tau_max: int) -> np.ndarray:
    # d(tau) = E0 + E_tau - 2 r(tau) over an integration window W = N - tau_max.
    width = frames.shape[1] - tau_max
    r = fftconvolve(frames, frames[:, width - 1::-1], mode="valid", axes=1)
    cs = np.concatenate([np.zeros((frames.shape[0], 1)), np.cumsum(frames**2, axis=1)], axis=1)
    taus = np.arange(tau_max + 1)
    energy = cs[:, taus + width] - cs[:, taus]
    d = energy[:, :1] + energy - 2.0 * r
    return np.maximum(d, 0.0)


def _cumulative_mean_normalize(d: np.ndarray) -> np.ndarray:
    out = np.ones_like(d)
    running = np.cumsum(d[:, 1:], axis=1)
    taus = np.arange(1, d.shape[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = d[:, 1:] * taus / running
    out[:, 1:] = np.where(running > 0, norm, 1.0)
    return out


def _pick_lag(row: np.ndarray, tau_min: int, trough_threshold: float) -> int:
    below = np.flatnonzero(row[tau_min:] < trough_threshold)
    if below.size == 0:
        return tau_min + int(np.argmin(row[tau_min:]))
    tau = tau_min + int(below[0])
    while tau + 1 < row.shape[0] and row[tau + 1] < row[tau]:
        tau += 1
    return tau


def estimate_f0(
    audio: AudioBuffer,
    f_min: float = 40.0,
    f_max: float = 1600.0,
    hop: int = 160,
    window_size: int = 1024,
    voicing_threshold: float = 0.3,
    trough_threshold: float = 0.1,
) -> Contour:
    """YIN-style F0 tracking: cumulative-mean-normalised difference function,
    first dip below the trough threshold (else the global minimum), parabolic
    refinement. A frame is voiced when 1 - d'(tau) >= voicing_threshold."""
    sr = audio.sample_rate
    if not 0 < f_min < f_max < sr / 2:
        raise ParameterError(f"need 0 < f_min < f_max < sample_rate/2, got f_min={f_min}, f_max={f_max}")
    if hop <= 0:
        raise ParameterError("hop must be positive")
    n_frames = frame_count(len(audio), hop)
    if len(audio) == 0:
        return Contour(np.zeros(n_frames), np.zeros(n_frames, dtype=bool), sr / hop)

    tau_min = max(2, int(math.floor(sr / f_max)))
    tau_max = int(math.ceil(sr / f_min))
    frame_length = max(window_size, 2 * tau_max + 2)
    frames = _centred_frames(audio.samples, frame_length, hop, "constant")
    if frames.shape[0] < n_frames:
        frames = np.concatenate([frames, np.zeros((n_frames - frames.shape[0], frame_length))])

    cmnd = _cumulative_mean_normalize(_difference(frames, tau_max))

    values = np.zeros(n_frames)
    voiced = np.zeros(n_frames, dtype=bool)
    for i, row in enumerate(cmnd):
        tau = _pick_lag(row, tau_min, trough_threshold)
        if 1.0 - row[tau] < voicing_threshold:
            continue
        shift = 0.0
        if 0 < tau < tau_max:
            a, b, c = row[tau - 1], row[tau], row[tau + 1]
            denom = a - 2.0 * b + c
            if denom > 0:
                shift = float(np.clip(0.5 * (a - c) / denom, -1.0, 1.0))
        values[i] = sr / (tau + shift)
        voiced[i] = True
    logger.debug("estimate_f0: %d/%d frames voiced", int(voiced.sum()), n_frames)
    return Contour(values, voiced, sr / hop)


def normalize_contour(contour: Contour) -> Tuple[Contour, float, float]:
    """Gap-fill unvoiced frames by linear interpolation, then z-normalise with the
    voiced mean and standard deviation. Returns (contour, mean, std)."""
    if contour.n_voiced < 2:
        raise ParameterError("contour too sparse")
    filled = _fill_gaps(contour)
    voiced_values = contour.values[contour.voiced]
    mean = float(voiced_values.mean())
    std = float(voiced_values.std())
    if std == 0.0:
        std = 1.0
    return Contour.dense((filled - mean) / std, contour.frame_rate), mean, std


def _fill_gaps(contour: Contour) -> np.ndarray:
    idx = np.flatnonzero(contour.voiced)
    frames = np.arange(len(contour))
    return np.interp(frames, idx, contour.values[idx])


def cwt_scales(n_scales: int) -> np.ndarray:
    """Dyadic scales in frames: 2, 4, 8, ..."""
    return SMALLEST_SCALE * 2.0 ** np.arange(n_scales)


def _mexican_hat_bank(n_scales: int, n: int) -> Tuple[np.ndarray, np.ndarray]:
    omega = 2.0 * np.pi * np.fft.fftfreq(n)
    scales = cwt_scales(n_scales)
    u = scales[:, None] * omega[None, :]
    norms = np.sqrt(2.0 * np.pi * scales) * _DOG2_NORM
    return norms[:, None] * u**2 * np.exp(-0.5 * u**2), norms


def cwt_decompose(contour: Contour, n_scales: int = 10) -> np.ndarray:
    """Mexican-hat CWT at dyadic scales, computed in the frequency domain over a
    symmetric extension of the gap-filled contour. Returns (L, n_scales)."""
    if n_scales < 1:
        raise ParameterError("n_scales must be >= 1")
    if contour.n_voiced < 2:
        raise ParameterError("contour too sparse")
    x = _fill_gaps(contour)
    n = x.shape[0]
    extended = np.concatenate([x, x[::-1]])
    bank, _ = _mexican_hat_bank(n_scales, extended.shape[0])
    coeffs = np.real(np.fft.ifft(np.fft.fft(extended)[None, :] * bank, axis=1))[:, :n]
    return _frozen(coeffs.T)


def cwt_reconstruct(matrix: np.ndarray, n_scales: int = 10, frame_rate: float = 100.0) -> Contour:
    """Approximate inverse: ln 2 times the norm-weighted sum over dyadic scales."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != n_scales:
        raise ParameterError(f"expected an L x {n_scales} coefficient matrix, got shape {matrix.shape}")
    norms = np.sqrt(2.0 * np.pi * cwt_scales(n_scales)) * _DOG2_NORM
    return Contour.dense(math.log(2.0) * (matrix / norms).sum(axis=1), frame_rate)


def _log_step(n_bins: int, v_min: float, v_max: float) -> float:
    return (math.log(v_max) - math.log(v_min)) / max(n_bins - 2, 1)


def log_quantize(contour: Contour, n_bins: int = 256, v_min: float = 40.0, v_max: float = 1600.0,
                 frame_rate: Optional[float] = None) -> QuantizedContour:
    """Bin 0 is reserved for unvoiced or non-positive frames. Bins 1..n_bins-2
    split [v_min, v_max) evenly in log space; bin n_bins-1 holds v_max."""
    if n_bins < 2:
        raise ParameterError(f"n_bins must be >= 2, got {n_bins}")
    if not 0 < v_min < v_max:
        raise ParameterError(f"need 0 < v_min < v_max, got {v_min}, {v_max}")
    values = contour.values
    active = contour.voiced & (values > 0)
    clamped = np.clip(np.where(active, values, v_min), v_min, v_max)
    ratio = (np.log(clamped) - math.log(v_min)) / (math.log(v_max) - math.log(v_min))
    idx = 1 + np.floor((n_bins - 2) * ratio).astype(np.int64)
    idx = np.clip(idx, 1, n_bins - 1)
    return QuantizedContour(np.where(active, idx, 0), n_bins, float(v_min), float(v_max),
                            frame_rate if frame_rate is not None else contour.frame_rate)


def log_dequantize(q: QuantizedContour) -> Contour:
    step = _log_step(q.n_bins, q.v_min, q.v_max)
    centres = np.exp(math.log(q.v_min) + (q.indices - 0.5) * step)
    values = np.where(q.indices == q.n_bins - 1, q.v_max, centres)
    values = np.where(q.indices == 0, 0.0, values)
    return Contour(values, q.indices > 0, q.frame_rate)
