# condaudio/ldm/probe.py
# Controllability probe: every sample's latent carries a smooth envelope that its
# control condition expresses, so condition-following is measurable by correlation.
from __future__ import annotations

import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from condaudio.config import ToyConfig, derive_seed
from condaudio.core.conditions import EventSet, TimestampGrid, grid_to_events, timestamp_caption
from condaudio.core.dsp import Contour, log_quantize
from condaudio.errors import ParameterError
from condaudio.ldm.encoder import ControlCondition
from condaudio.ldm.model import ToyModel
from condaudio.ldm.sampling import sample
from condaudio.ldm.training import Batch

logger = logging.getLogger(__name__)

MIN_PERIOD = 16.0
_ENERGY_RANGE = (math.exp(-3.0), math.exp(3.0))
_PITCH_RANGE = (40.0, 1600.0)
_PITCH_CENTRE = 220.0
_WORDS = ("a", "sound", "with", "loud", "soft", "rising", "falling", "noise", "in", "the", "background")


def smooth_envelope(n_frames: int, rng: np.random.Generator, n_components: int = 3) -> np.ndarray:
    """Zero-mean, unit-variance sum of sinusoids with periods of at least MIN_PERIOD frames."""
    t = np.arange(n_frames)
    for _ in range(8):
        periods = rng.uniform(MIN_PERIOD, max(2.0 * n_frames, MIN_PERIOD + 1.0), n_components)
        phases = rng.uniform(0.0, 2.0 * np.pi, n_components)
        weights = rng.normal(size=n_components)
        s = (weights[:, None] * np.sin(2.0 * np.pi * t[None, :] / periods[:, None] + phases[:, None])).sum(axis=0)
        s = s - s.mean()
        if s.std() > 1e-6 and np.any(s > 0) and np.any(s <= 0):
            return s / s.std()
    raise ParameterError("could not draw a non-degenerate envelope")


def latent_template(model: ToyModel) -> torch.Tensor:
    """Fixed positive mel profile projected to the latent space, scaled to norm sqrt(F')."""
    cfg = model.config
    rng = np.random.default_rng(derive_seed(cfg.seed, "probe-template"))
    mel = torch.as_tensor(rng.uniform(0.5, 1.5, cfg.mel_bins), dtype=model.dtype)
    u = model.encode_mel(mel)
    return u * math.sqrt(cfg.latent_dim) / torch.linalg.norm(u)


def _condition(kind: str, s: np.ndarray, model: ToyModel, rng: np.random.Generator):
    """Condition expressing envelope s, and the target the latent carries."""
    cfg = model.config
    frame_rate = 1.0
    if kind == "energy":
        q = log_quantize(Contour.dense(np.exp(s), frame_rate), cfg.n_bins, *_ENERGY_RANGE)
        return ControlCondition("energy", q), s
    if kind == "pitch":
        q = log_quantize(Contour.dense(_PITCH_CENTRE * 2.0 ** (s / 2.0), frame_rate), cfg.n_bins, *_PITCH_RANGE)
        return ControlCondition("pitch", q), s
    d = int(rng.integers(len(cfg.event_classes)))
    active = (s > 0).astype(np.uint8)
    grid = np.zeros((len(cfg.event_classes), len(s)), dtype=np.uint8)
    grid[d] = active
    target = active.astype(np.float64)
    target = (target - target.mean()) / target.std()
    return ControlCondition("timestamp", TimestampGrid(grid, frame_rate)), target


def probe_caption(caption: str, grid: TimestampGrid, config: ToyConfig) -> str:
    """Caption of a timestamp probe sample: the event class is named, and with
    CAPTION_MODE=timestamp its timing is spelled out as well."""
    events = grid_to_events(grid, EventSet(tuple(config.event_classes)))
    if config.caption_mode == "timestamp":
        return timestamp_caption(caption, events)
    return f"{caption} {events[0].label}"


def make_probe_batch(model: ToyModel, n: int, rng: np.random.Generator) -> Batch:
    cfg = model.config
    if n < 1:
        raise ParameterError("probe batch size must be positive")
    u = latent_template(model)
    controls, targets, captions = [], [], []
    for _ in range(n):
        kind = str(rng.choice(cfg.condition_types))
        s = smooth_envelope(cfg.latent_frames, rng)
        control, target = _condition(kind, s, model, rng)
        controls.append(control)
        targets.append(target)
        words = list(rng.choice(_WORDS, size=int(rng.integers(2, 6))))
        caption = " ".join(words)
        if kind == "timestamp":
            caption = probe_caption(caption, control.value, cfg)
        captions.append(caption)
    envelopes = torch.as_tensor(np.stack(targets), dtype=model.dtype)
    x0 = envelopes[:, :, None] * u[None, None, :]
    return Batch(x0=x0, text=model.embed_captions(captions), controls=controls, captions=captions, targets=envelopes)


def probe_batches(model: ToyModel, seed: int, n: int):
    """Deterministic stream of fresh probe batches, one per training step."""
    rng = np.random.default_rng(derive_seed(seed, "data"))
    return lambda step: make_probe_batch(model, n, rng)


def decode_envelope(model: ToyModel, latents: torch.Tensor) -> torch.Tensor:
    u = latent_template(model)
    return latents @ u / (u @ u)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    a = a - a.mean()
    b = b - b.mean()
    denom = np.sqrt((a * a).sum() * (b * b).sum())
    return float((a * b).sum() / denom) if denom > 0 else 0.0


def probe_score(model: ToyModel, latents: torch.Tensor, batch: Batch) -> float:
    """Mean Pearson correlation between decoded and target envelopes."""
    if batch.targets is None:
        raise ParameterError("probe score needs a batch with target envelopes")
    decoded = decode_envelope(model, latents).detach().cpu().numpy()
    targets = batch.targets.detach().cpu().numpy()
    return float(np.mean([_pearson(d, t) for d, t in zip(decoded, targets)]))


def shuffled(batch: Batch) -> Batch:
    """Controls rotated by one sample, so every sample gets another sample's condition."""
    return batch.with_controls(batch.controls[1:] + batch.controls[:1])


def score_conditions(model: ToyModel, batch: Batch, steps: int, omega: float, seed: int) -> Dict[str, float]:
    """Probe scores of latents sampled with matching and with shuffled controls."""
    out = {}
    c_text = model.text_condition(batch.text)
    for name, b in (("matched", batch), ("shuffled", shuffled(batch))):
        generator = torch.Generator().manual_seed(derive_seed(seed, "sampler"))
        with torch.no_grad():
            c_control = model.control_condition(b.controls)
        out[name] = probe_score(model, sample(model, c_text, c_control, steps, omega, generator), batch)
    return out


def sweep(model: ToyModel, batch: Batch, omegas: Sequence[float], steps: Sequence[int],
          seed: Optional[int] = None) -> List[Dict[str, float]]:
    """Guidance scale x sampling steps grid of matched and shuffled probe scores."""
    seed = model.config.seed if seed is None else seed
    rows = []
    for omega in omegas:
        for n_steps in steps:
            scores = score_conditions(model, batch, n_steps, omega, seed)
            rows.append({"omega": float(omega), "steps": int(n_steps), **scores})
            logger.info("omega=%.1f steps=%d matched=%.3f shuffled=%.3f",
                        omega, n_steps, scores["matched"], scores["shuffled"])
    return rows
