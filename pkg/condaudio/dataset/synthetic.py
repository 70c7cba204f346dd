# condaudio/dataset/synthetic.py
# Deterministic fixture corpus: short WAV clips of tonal and noise bursts with
# matching strong labels and captions.
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from condaudio.config import derive_seed
from condaudio.core.audio import AudioBuffer, write_wav
from condaudio.core.conditions import Event
from condaudio.dataset.labels import format_strong_labels
from condaudio.errors import ParameterError
from condaudio.tools.report import write_text

logger = logging.getLogger(__name__)

MAX_CLIPS = 20

# class -> (base frequency in Hz, or None for a noise burst; caption phrase)
FIXTURE_CLASSES: Dict[str, Tuple[Union[float, None], str]] = {
    "dog": (440.0, "a dog barks"),
    "siren": (880.0, "a siren wails"),
    "speech": (180.0, "a man speaks"),
    "engine": (None, "an engine rumbles"),
}


def _burst(label: str, n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    freq, _ = FIXTURE_CLASSES[label]
    t = np.arange(n) / sr
    if freq is None:
        signal = rng.normal(scale=0.3, size=n)
    else:
        vibrato = 1.0 + 0.03 * np.sin(2 * np.pi * rng.uniform(2.0, 6.0) * t)
        signal = 0.5 * np.sin(2 * np.pi * np.cumsum(freq * vibrato) / sr)
    ramp = min(n // 4, int(0.01 * sr))
    envelope = np.ones(n)
    if ramp:
        envelope[:ramp] = np.linspace(0.0, 1.0, ramp)
        envelope[-ramp:] = np.linspace(1.0, 0.0, ramp)
    return signal * envelope


def synth_clip(rng: np.random.Generator, seconds: float, sample_rate: int) -> Tuple[np.ndarray, List[Event]]:
    n = int(round(seconds * sample_rate))
    samples = np.zeros(n)
    events = []
    classes = sorted(FIXTURE_CLASSES)
    for label in rng.choice(classes, size=int(rng.integers(1, 4)), replace=False):
        duration = round(float(rng.uniform(0.2, 0.4)) * seconds, 2)
        onset = np.floor(rng.uniform(0.0, seconds - duration) * 100.0) / 100.0
        start = int(round(onset * sample_rate))
        stop = min(n, int(round((onset + duration) * sample_rate)))
        samples[start:stop] += _burst(str(label), stop - start, sample_rate, rng)
        events.append(Event(label=str(label), onset=float(onset), offset=round(onset + duration, 2)))
    samples += rng.normal(scale=1e-3, size=n)
    return np.clip(samples, -1.0, 1.0), sorted(events, key=lambda e: (e.onset, e.label))


def write_fixture_corpus(out_dir: Union[str, Path], n_clips: int = 10, seed: int = 0, seconds: float = 10.0,
                         sample_rate: int = 16000) -> Tuple[Path, Path, Path]:
    """Writes audio/<id>.wav, labels.tsv and captions.json; returns their paths."""
    if not 1 <= n_clips <= MAX_CLIPS:
        raise ParameterError(f"fixture corpus holds 1..{MAX_CLIPS} clips, got {n_clips}")
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(derive_seed(seed, "data"))

    labels, captions = {}, {}
    for i in range(n_clips):
        cid = f"Y{i:03d}"
        samples, events = synth_clip(rng, seconds, sample_rate)
        write_wav(audio_dir / f"{cid}.wav", AudioBuffer(samples, sample_rate))
        labels[cid] = events
        captions[cid] = " and ".join(FIXTURE_CLASSES[e.label][1] for e in events)

    labels_path, captions_path = out_dir / "labels.tsv", out_dir / "captions.json"
    write_text(labels_path, format_strong_labels(labels))
    write_text(captions_path, json.dumps(captions, indent=2, sort_keys=True))
    logger.info("wrote %d fixture clips to %s", n_clips, audio_dir)
    return audio_dir, labels_path, captions_path
