# condaudio/ldm/model.py
# Desk-scale conditional latent diffusion model. The backbone (latent
# projection, text-conditioned denoiser) is frozen at a fixed seed; only the
# control encoder, the Fusion-Net layers and the null embeddings train.
from __future__ import annotations

import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from torch import nn

from condaudio.config import CONDITION_TYPES, ToyConfig, derive_seed
from condaudio.core.conditions import HashEmbeddingProvider, embed_text
from condaudio.errors import ParameterError
from condaudio.ldm.encoder import ControlCondition, ControlEncoder, normal_, reset_layers, sinusoidal_embedding
from condaudio.ldm.fusion import FusionLayer, multi_head_attention
from condaudio.ldm.schedule import DiffusionSchedule, linear_schedule

logger = logging.getLogger(__name__)


class BackboneLayer(nn.Module):
    """h + CrossAttn(h, text), then h + FFN(h)."""

    def __init__(self, hidden: int, n_heads: int, ff_mult: int):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(hidden, hidden, bias=False)
        self.k = nn.Linear(hidden, hidden, bias=False)
        self.v = nn.Linear(hidden, hidden, bias=False)
        self.o = nn.Linear(hidden, hidden, bias=False)
        self.ffn = nn.Sequential(nn.Linear(hidden, ff_mult * hidden), nn.GELU(), nn.Linear(ff_mult * hidden, hidden))

    def forward(self, h: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
        h = h + self.o(multi_head_attention(self.q(h), self.k(text), self.v(text), self.n_heads))
        return h + self.ffn(h)


class Backbone(nn.Module):
    def __init__(self, config: ToyConfig):
        super().__init__()
        H = config.hidden
        self.w_in = nn.Linear(config.latent_dim, H)
        self.time_mlp = nn.Sequential(nn.Linear(H, H), nn.SiLU(), nn.Linear(H, H))
        self.text_proj = nn.Linear(config.text_dim, H)
        self.layers = nn.ModuleList(BackboneLayer(H, config.n_heads, config.ff_mult) for _ in range(config.n_layers))
        self.w_out = nn.Linear(H, config.latent_dim)
        self.register_buffer("position", sinusoidal_embedding(torch.arange(config.latent_frames), H).float())
        # Orthonormal columns: mel (.., mel_bins) @ basis -> latent (.., latent_dim).
        self.register_buffer("latent_basis", torch.zeros(config.mel_bins, config.latent_dim))

    def reset_parameters(self, generator: torch.Generator) -> torch.Tensor:
        """Returns the float64 latent basis; callers recast it after a dtype change."""
        reset_layers(self, generator)
        gaussian = torch.randn(self.latent_basis.shape, generator=generator, dtype=torch.float64)
        basis, _ = torch.linalg.qr(gaussian)
        self.latent_basis.copy_(basis.to(self.latent_basis.dtype))
        return basis


class ToyModel(nn.Module):
    def __init__(self, config: ToyConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        self.schedule: DiffusionSchedule = linear_schedule(config.timesteps, config.beta_start, config.beta_end)
        self.text_provider = HashEmbeddingProvider(config.text_dim, salt="text:")

        self.backbone = Backbone(config)
        self.encoder = ControlEncoder(config)
        # Box tokens carry no frame position.
        locality = 0.0 if config.timestamp_encoder == "box" else config.locality
        self.fusion = nn.ModuleList(
            FusionLayer(config.hidden, config.n_heads, config.ff_mult, stride, locality, config.fusion_mode)
            for stride in config.strides
        )
        self.null_text = nn.Parameter(torch.empty(config.text_dim))

        generator = torch.Generator().manual_seed(derive_seed(config.seed, "init"))
        basis = self.backbone.reset_parameters(generator)
        self.encoder.reset_parameters(generator)
        for layer in self.fusion:
            reset_layers(layer, generator)
            nn.init.zeros_(layer.gate)
        normal_(self.null_text, 1.0 / math.sqrt(config.text_dim), generator)
        self.backbone.requires_grad_(False)
        self.to(dtype)
        # Recast from float64: orthonormal to the working precision.
        self.backbone.latent_basis.copy_(basis.to(dtype))
        logger.debug("toy model: %d frozen, %d trainable scalars",
                     sum(p.numel() for p in self.frozen_parameters()),
                     sum(p.numel() for p in self.trainable_parameters()))

    @property
    def dtype(self) -> torch.dtype:
        return self.null_text.dtype

    def trainable_parameters(self) -> List[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def frozen_parameters(self) -> List[nn.Parameter]:
        return [p for p in self.parameters() if not p.requires_grad]

    def frozen_state(self) -> Dict[str, bytes]:
        """Raw bytes of every frozen tensor, for byte-equality checks."""
        return {name: t.detach().cpu().numpy().tobytes() for name, t in self.backbone.state_dict().items()}

    # VAE stand-in

    def encode_mel(self, mel: torch.Tensor) -> torch.Tensor:
        if mel.shape[-1] != self.config.mel_bins:
            raise ParameterError(f"mel has {mel.shape[-1]} bins, expected {self.config.mel_bins}")
        return mel.to(self.dtype) @ self.backbone.latent_basis

    def decode_latent(self, latent: torch.Tensor) -> torch.Tensor:
        if latent.shape[-1] != self.config.latent_dim:
            raise ParameterError(f"latent has {latent.shape[-1]} dims, expected {self.config.latent_dim}")
        return latent @ self.backbone.latent_basis.T

    # Conditions

    def embed_captions(self, captions: Sequence[str]) -> torch.Tensor:
        """Frozen text stream: (B, text_tokens, text_dim)."""
        text = np.stack([embed_text(c, self.text_provider, self.config.text_tokens) for c in captions])
        return torch.as_tensor(text, dtype=self.dtype)

    def text_condition(self, text: torch.Tensor, drop: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Replace dropped samples' text (all of it when text is disabled) by the learned null embedding."""
        null = self.null_text.expand_as(text)
        if not self.config.use_text:
            return null
        if drop is None or not bool(drop.any()):
            return text
        return torch.where(drop[:, None, None], null, text)

    def null_text_condition(self, batch_size: int) -> torch.Tensor:
        return self.null_text.expand(batch_size, self.config.text_tokens, -1)

    def control_condition(self, controls: Sequence[ControlCondition], drop: Optional[torch.Tensor] = None) -> torch.Tensor:
        return self.encoder(controls, drop)

    # Denoiser

    def predict_noise(self, x_t: torch.Tensor, t, c_text: torch.Tensor,
                      c_control: Optional[torch.Tensor] = None) -> torch.Tensor:
        """eps_theta(x_t, t, c_text, c_control). Without c_control the Fusion-Net is skipped."""
        cfg = self.config
        B = x_t.shape[0]
        if x_t.shape[1:] != (cfg.latent_frames, cfg.latent_dim):
            raise ParameterError(f"x_t must be (B, {cfg.latent_frames}, {cfg.latent_dim}), got {tuple(x_t.shape)}")
        if c_text.shape[0] != B or c_text.shape[-1] != cfg.text_dim:
            raise ParameterError(f"c_text must be (B, N, {cfg.text_dim}), got {tuple(c_text.shape)}")
        n_tokens = self.encoder.n_tokens
        if c_control is not None and c_control.shape != (B, n_tokens, cfg.hidden):
            raise ParameterError(f"c_control must be (B, {n_tokens}, {cfg.hidden}), got {tuple(c_control.shape)}")
        t = self.schedule.check_steps(t).reshape(-1).expand(B)

        bb = self.backbone
        t_emb = sinusoidal_embedding(t, cfg.hidden).to(x_t.dtype)
        h = bb.w_in(x_t) + bb.position.to(x_t.dtype) + bb.time_mlp(t_emb)[:, None, :]
        text = bb.text_proj(c_text)
        groups = self.encoder.downsample(c_control) if c_control is not None else None
        for i, layer in enumerate(bb.layers):
            h = layer(h, text)
            if groups is not None:
                h = self.fusion[i](h, groups[i])
        return bb.w_out(h)


def encode_control(standardized: torch.Tensor, type_id, model: ToyModel) -> torch.Tensor:
    """MLP(standardized + position) + CLS[type_id] for one (L, H) matrix or a (B, L, H) batch."""
    if isinstance(type_id, str):
        if type_id not in CONDITION_TYPES:
            raise ParameterError(f"unknown condition type: {type_id!r}")
        type_id = CONDITION_TYPES.index(type_id)
    if standardized.ndim == 2:
        return model.encoder.encode(standardized[None], [type_id])[0]
    ids = [type_id] * standardized.shape[0] if isinstance(type_id, int) else type_id
    return model.encoder.encode(standardized, ids)


def downsample_control(emb: torch.Tensor, model: ToyModel) -> List[torch.Tensor]:
    unbatched = emb.ndim == 2
    groups = model.encoder.downsample(emb[None] if unbatched else emb)
    return [g[0] for g in groups] if unbatched else groups
