# condaudio/ldm/training.py
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

import torch
import torch.nn.functional as F

from condaudio.config import ToyConfig, derive_seed
from condaudio.errors import DivergenceError, ParameterError
from condaudio.ldm.encoder import ControlCondition
from condaudio.ldm.model import ToyModel
from condaudio.ldm.schedule import forward_diffuse

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Batch:
    """Training or probe samples. `text` holds frozen caption embeddings; the drop
    masks mark samples whose stream is replaced by the learned null embedding."""

    x0: torch.Tensor  # (B, T', F')
    text: torch.Tensor  # (B, N, text_dim)
    controls: List[ControlCondition]
    captions: List[str] = field(default_factory=list)
    targets: Optional[torch.Tensor] = None  # (B, T') envelopes, probe batches only
    drop_text: Optional[torch.Tensor] = None
    drop_control: Optional[torch.Tensor] = None

    def __post_init__(self):
        B = self.x0.shape[0]
        if B == 0:
            raise ParameterError("batch must not be empty")
        if self.text.shape[0] != B or len(self.controls) != B:
            raise ParameterError("x0, text and controls must share the batch size")
        if self.drop_text is None:
            object.__setattr__(self, "drop_text", torch.zeros(B, dtype=torch.bool))
        if self.drop_control is None:
            object.__setattr__(self, "drop_control", torch.zeros(B, dtype=torch.bool))

    def __len__(self) -> int:
        return int(self.x0.shape[0])

    def with_controls(self, controls: List[ControlCondition]) -> "Batch":
        return replace(self, controls=list(controls))


def guidance_dropout(batch: Batch, p: float, generator: torch.Generator, drops: str = "both") -> Batch:
    """Each sample independently, with probability p, loses its conditions to the
    null embeddings: both streams, or only the control stream with drops="control"."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"dropout probability must be in [0, 1], got {p}")
    if drops not in ("both", "control"):
        raise ParameterError(f"unknown guidance drop mode: {drops!r}")
    dropped = torch.rand(len(batch), generator=generator, dtype=torch.float64) < p
    logger.debug("guidance dropout: %d/%d samples unconditioned", int(dropped.sum()), len(batch))
    drop_text = batch.drop_text | dropped if drops == "both" else batch.drop_text
    return replace(batch, drop_text=drop_text, drop_control=batch.drop_control | dropped)


def ldm_loss(model: ToyModel, x0: torch.Tensor, t, noise: torch.Tensor, c_text: torch.Tensor,
             c_control: Optional[torch.Tensor]) -> torch.Tensor:
    """Mean squared error between the injected noise and its prediction."""
    x_t = forward_diffuse(x0, t, noise, model.schedule)
    return F.mse_loss(model.predict_noise(x_t, t, c_text, c_control), noise)


def batch_loss(model: ToyModel, batch: Batch, t: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    c_text = model.text_condition(batch.text, batch.drop_text)
    c_control = model.control_condition(batch.controls, batch.drop_control)
    return ldm_loss(model, batch.x0, t, noise, c_text, c_control)


def draw_timesteps_and_noise(model: ToyModel, batch: Batch, generator: torch.Generator):
    t = torch.randint(1, model.schedule.T + 1, (len(batch),), generator=generator)
    noise = torch.randn(batch.x0.shape, generator=generator, dtype=torch.float64).to(batch.x0.dtype)
    return t, noise


def evaluation_loss(model: ToyModel, batch: Batch, seed: int) -> float:
    """Loss on (t, noise) draws fixed by `seed`, without guidance dropout."""
    generator = torch.Generator().manual_seed(derive_seed(seed, "eval"))
    t, noise = draw_timesteps_and_noise(model, batch, generator)
    with torch.no_grad():
        return float(batch_loss(model, batch, t, noise))


def make_optimizer(model: ToyModel, config: ToyConfig) -> torch.optim.Optimizer:
    params = model.trainable_parameters()
    if config.optimizer == "sgd":
        return torch.optim.SGD(params, lr=config.learning_rate, momentum=config.momentum)
    return torch.optim.AdamW(params, lr=config.learning_rate, weight_decay=config.weight_decay)


class Trainer:
    """Owns the model's trainable state and the seeded dropout / noise streams."""

    def __init__(self, model: ToyModel, config: Optional[ToyConfig] = None, seed: Optional[int] = None):
        self.model = model
        self.config = config or model.config
        seed = self.config.seed if seed is None else seed
        self.optimizer = make_optimizer(model, self.config)
        self.dropout_rng = torch.Generator().manual_seed(derive_seed(seed, "dropout"))
        self.noise_rng = torch.Generator().manual_seed(derive_seed(seed, "noise"))
        self.steps = 0

    def train_step(self, batch: Batch, learning_rate: Optional[float] = None) -> float:
        """One update of the trainable parameters; returns the pre-update loss."""
        if learning_rate is not None:
            for group in self.optimizer.param_groups:
                group["lr"] = learning_rate
        batch = guidance_dropout(batch, self.config.guidance_dropout, self.dropout_rng, self.config.uncond_drops)
        t, noise = draw_timesteps_and_noise(self.model, batch, self.noise_rng)
        loss = batch_loss(self.model, batch, t, noise)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergenceError("divergence", {"step": self.steps, "loss": value, "t_max": int(t.max())})
        self.optimizer.zero_grad(set_to_none=True)
        loss.backward()
        if self.config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(self.model.trainable_parameters(), self.config.grad_clip)
        self.optimizer.step()
        self.steps += 1
        return value

    def fit(self, batches: Callable[[int], Batch], steps: int, eval_batch: Optional[Batch] = None,
            log_every: int = 50) -> List[Dict[str, float]]:
        """Train for `steps` steps on `batches(step)`; returns the logged history."""
        history = []
        for step in range(steps):
            loss = self.train_step(batches(step))
            if (step + 1) % log_every == 0 or step + 1 == steps:
                row = {"step": step + 1, "loss": loss}
                if eval_batch is not None:
                    row["eval_loss"] = evaluation_loss(self.model, eval_batch, self.config.seed)
                logger.info("step %d: %s", step + 1, ", ".join(f"{k}={v:.4f}" for k, v in row.items() if k != "step"))
                history.append(row)
        return history
