# condaudio/ldm/fusion.py
from __future__ import annotations

import math
from typing import Optional

import torch
from torch import nn

from condaudio.errors import ParameterError


def multi_head_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, n_heads: int,
                         bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Scaled dot-product attention. q (B, S, H), k/v (B, N, H), bias (S, N) added to the logits."""
    B, S, H = q.shape
    N = k.shape[1]
    hd = H // n_heads
    q = q.reshape(B, S, n_heads, hd).transpose(1, 2)
    k = k.reshape(B, N, n_heads, hd).transpose(1, 2)
    v = v.reshape(B, N, n_heads, hd).transpose(1, 2)
    logits = q @ k.transpose(-1, -2) / math.sqrt(hd)
    if bias is not None:
        logits = logits + bias
    out = torch.softmax(logits, dim=-1) @ v
    return out.transpose(1, 2).reshape(B, S, H)


def locality_bias(n_control: int, n_mel: int, stride: int, locality: float,
                  dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """-locality * |centre_i - centre_j| in latent frames over [control || mel] tokens."""
    centres = torch.cat([
        (torch.arange(n_control, dtype=torch.float64) + 0.5) * stride,
        torch.arange(n_mel, dtype=torch.float64) + 0.5,
    ])
    return (-locality * (centres[:, None] - centres[None, :]).abs()).to(dtype)


class FusionLayer(nn.Module):
    """Gated Fusion-Net block inserted after one frozen backbone layer."""

    def __init__(self, hidden: int, n_heads: int, ff_mult: int, stride: int,
                 locality: float = 0.0, mode: str = "attention"):
        super().__init__()
        if mode not in ("attention", "add"):
            raise ParameterError(f"unknown fusion mode: {mode!r}")
        self.n_heads = n_heads
        self.stride = stride
        self.locality = locality
        self.mode = mode
        self.norm = nn.LayerNorm(hidden)
        self.q = nn.Linear(hidden, hidden, bias=False)
        self.k = nn.Linear(hidden, hidden, bias=False)
        self.v = nn.Linear(hidden, hidden, bias=False)
        self.o = nn.Linear(hidden, hidden, bias=False)
        self.ffn = nn.Sequential(nn.Linear(hidden, ff_mult * hidden), nn.GELU(), nn.Linear(ff_mult * hidden, hidden))
        self.gate = nn.Parameter(torch.zeros(()))

    def forward(self, mel_tokens: torch.Tensor, control_tokens: torch.Tensor) -> torch.Tensor:
        return fusion_forward(mel_tokens, control_tokens, self)


def fusion_forward(mel_tokens: torch.Tensor, control_tokens: torch.Tensor, layer: FusionLayer) -> torch.Tensor:
    """out = mel + gate * FFN(select_mel(SelfAttn(LN([control || mel])))).

    SelfAttn is a residual block, z + O(MHA(z)). Accepts (Q, H) / (P, H) or batched (B, Q, H) / (B, P, H) tokens."""
    unbatched = mel_tokens.ndim == 2
    if unbatched:
        mel_tokens, control_tokens = mel_tokens[None], control_tokens[None]
    H = layer.norm.normalized_shape[0]
    if mel_tokens.shape[-1] != H or control_tokens.shape[-1] != H:
        raise ParameterError(
            f"token widths must equal {H}: mel {mel_tokens.shape[-1]}, control {control_tokens.shape[-1]}"
        )
    if control_tokens.shape[0] != mel_tokens.shape[0]:
        raise ParameterError("mel and control token batches differ")
    P, Q = control_tokens.shape[1], mel_tokens.shape[1]

    if layer.mode == "add":
        up = control_tokens.repeat_interleave(layer.stride, dim=1)[:, :Q]
        if up.shape[1] < Q:
            up = torch.cat([up, up.new_zeros(up.shape[0], Q - up.shape[1], H)], dim=1)
        update = layer.ffn(layer.norm(up))
    else:
        z = layer.norm(torch.cat([control_tokens, mel_tokens], dim=1))
        bias = None
        if layer.locality > 0:
            bias = locality_bias(P, Q, layer.stride, layer.locality, z.dtype).to(z.device)
        attended = z + layer.o(multi_head_attention(layer.q(z), layer.k(z), layer.v(z), layer.n_heads, bias))
        update = layer.ffn(attended[:, P:])
    out = mel_tokens + layer.gate * update
    return out[0] if unbatched else out
