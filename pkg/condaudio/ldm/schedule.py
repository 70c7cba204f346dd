# condaudio/ldm/schedule.py
# Linear beta schedule, closed-form forward diffusion and the classifier-free
# guidance combination. Timesteps are 1-based: t in {1, ..., T}.
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import torch

from condaudio.errors import ParameterError


@dataclass(frozen=True)
class DiffusionSchedule:
    betas: torch.Tensor  # (T,) float64
    alphas: torch.Tensor
    alpha_bars: torch.Tensor

    @property
    def T(self) -> int:
        return int(self.betas.shape[0])

    def alpha_bar(self, t: Union[int, torch.Tensor]) -> torch.Tensor:
        """alpha_bar_t for 1-based t; t = 0 gives 1."""
        padded = torch.cat([torch.ones(1, dtype=self.alpha_bars.dtype), self.alpha_bars])
        return padded[torch.as_tensor(t, dtype=torch.long)]

    def check_steps(self, t: Union[int, torch.Tensor]) -> torch.Tensor:
        t = torch.as_tensor(t, dtype=torch.long)
        if t.numel() and (int(t.min()) < 1 or int(t.max()) > self.T):
            raise ParameterError(f"timestep out of range 1..{self.T}: {t.tolist()}")
        return t


def linear_schedule(T: int = 200, beta_start: float = 1e-4, beta_end: float = 2e-2) -> DiffusionSchedule:
    if T < 1:
        raise ParameterError("T must be >= 1")
    if not 0 < beta_start <= beta_end < 1:
        raise ParameterError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    alphas = 1.0 - betas
    return DiffusionSchedule(betas, alphas, torch.cumprod(alphas, dim=0))


def forward_diffuse(x0: torch.Tensor, t, noise: torch.Tensor, sched: DiffusionSchedule) -> torch.Tensor:
    """x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise.

    `t` is an int or a (B,) tensor matching the batch axis of x0."""
    if x0.shape != noise.shape:
        raise ParameterError(f"x0 and noise shapes differ: {tuple(x0.shape)} != {tuple(noise.shape)}")
    t = sched.check_steps(t)
    a_bar = sched.alpha_bar(t).to(dtype=x0.dtype, device=x0.device)
    if a_bar.ndim:
        a_bar = a_bar.reshape(-1, *([1] * (x0.ndim - 1)))
    return torch.sqrt(a_bar) * x0 + torch.sqrt(1.0 - a_bar) * noise


def cfg_combine(eps_cond: torch.Tensor, eps_uncond: torch.Tensor, omega: float) -> torch.Tensor:
    """omega * eps_cond + (1 - omega) * eps_uncond."""
    if eps_cond.shape != eps_uncond.shape:
        raise ParameterError(f"guidance branches differ in shape: {tuple(eps_cond.shape)} != {tuple(eps_uncond.shape)}")
    return omega * eps_cond + (1.0 - omega) * eps_uncond
