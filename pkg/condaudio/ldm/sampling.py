# condaudio/ldm/sampling.py
from __future__ import annotations

import logging
from typing import List, Optional

import numpy as np
import torch

from condaudio.errors import DivergenceError, ParameterError
from condaudio.ldm.model import ToyModel
from condaudio.ldm.schedule import cfg_combine

logger = logging.getLogger(__name__)


def timestep_sequence(T: int, steps: int) -> List[int]:
    """`steps` descending timesteps from T down to 1, evenly spaced and unique."""
    if steps < 1:
        raise ParameterError("steps must be >= 1")
    if steps > T:
        raise ParameterError(f"steps ({steps}) cannot exceed T ({T})")
    return [int(t) for t in np.round(np.linspace(T, 1, steps)).astype(int)]


@torch.no_grad()
def sample(model: ToyModel, c_text: torch.Tensor, c_control: Optional[torch.Tensor], steps: int,
           omega: float, generator: torch.Generator, drops: Optional[str] = None) -> torch.Tensor:
    """Deterministic DDIM reverse trajectory from seeded Gaussian noise. Every step
    combines the conditioned and null-conditioned predictions with guidance scale omega."""
    if omega < 0:
        raise ParameterError("omega must be >= 0")
    cfg = model.config
    drops = drops or cfg.uncond_drops
    B = c_text.shape[0]
    sched = model.schedule
    ts = timestep_sequence(sched.T, steps)

    x = torch.randn((B, cfg.latent_frames, cfg.latent_dim), generator=generator, dtype=torch.float64).to(model.dtype)
    uncond_text = model.null_text_condition(B) if drops == "both" else c_text
    uncond_control = model.encoder.null_embedding(B) if c_control is not None else None

    x0_hat = x
    for i, t in enumerate(ts):
        eps_cond = model.predict_noise(x, t, c_text, c_control)
        eps_uncond = model.predict_noise(x, t, uncond_text, uncond_control)
        eps = cfg_combine(eps_cond, eps_uncond, omega)
        a_t = sched.alpha_bar(t).to(x.dtype)
        a_prev = sched.alpha_bar(ts[i + 1] if i + 1 < len(ts) else 0).to(x.dtype)
        x0_hat = (x - torch.sqrt(1.0 - a_t) * eps) / torch.sqrt(a_t)
        x = torch.sqrt(a_prev) * x0_hat + torch.sqrt(1.0 - a_prev) * eps
        if not torch.isfinite(x).all():
            raise DivergenceError("sampler divergence", {"t": t, "step": i, "omega": omega})
    logger.debug("sampled %d latents in %d steps (omega=%.2f)", B, len(ts), omega)
    return x0_hat
