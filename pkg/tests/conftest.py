import numpy as np
import pytest

from condaudio.config import ToyConfig
from condaudio.core.audio import AudioBuffer

SR = 16000


def sine(freq, seconds=1.0, sr=SR, amplitude=0.5):
    t = np.arange(int(round(seconds * sr))) / sr
    return AudioBuffer((amplitude * np.sin(2 * np.pi * freq * t)).astype(np.float32), sr)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    # Small enough for float64 finite-difference checks over every trainable scalar.
    return ToyConfig(
        seed=3,
        latent_frames=8,
        latent_dim=4,
        mel_bins=16,
        hidden=8,
        n_heads=2,
        ff_mult=1,
        n_layers=2,
        strides=[2, 4],
        text_dim=4,
        text_tokens=2,
        label_dim=4,
        event_classes=["dog", "speech"],
        n_bins=8,
        timesteps=20,
        sample_steps=5,
        batch_size=4,
        train_steps=5,
        probe_samples=4,
        sweep_omegas=[1.0, 2.0],
        sweep_steps=[2, 5],
    )


@pytest.fixture
def small_config():
    return ToyConfig(
        seed=11,
        latent_frames=32,
        latent_dim=8,
        mel_bins=32,
        hidden=32,
        n_heads=4,
        n_layers=3,
        strides=[2, 4, 8],
        text_dim=16,
        text_tokens=4,
        label_dim=16,
        n_bins=32,
        timesteps=100,
        sample_steps=20,
        batch_size=16,
        train_steps=500,
        probe_samples=16,
    )
