"""Transformer encoder over the backbone's feature map.

Learnable positional encoding added once, then stacked layers of
multi-head self-attention and a position-wise FFN, both post-norm
(LayerNorm after the residual add). Projections carry no bias terms.
The softmax denominator defaults to sqrt(C) over the full channel width;
set ModelConfig.attn_scale="head" for the per-head sqrt(C_h) variant.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from adwpf.core_types import ModelConfig


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        channels = cfg.feature_channels
        self.heads = cfg.heads
        self.head_dim = cfg.head_dim
        self.scale = math.sqrt(channels if cfg.attn_scale == "model" else cfg.head_dim)
        self.slope = cfg.leaky_slope
        self.w_q = nn.Linear(channels, channels, bias=False)
        self.w_k = nn.Linear(channels, channels, bias=False)
        self.w_v = nn.Linear(channels, channels, bias=False)
        self.w_u = nn.Linear(channels, channels, bias=False)
        self.w_1 = nn.Linear(channels, cfg.ffn_dim, bias=False)
        self.w_2 = nn.Linear(cfg.ffn_dim, channels, bias=False)
        self.norm_attn = nn.LayerNorm(channels)
        self.norm_ffn = nn.LayerNorm(channels)
        self.drop = nn.Dropout(cfg.dropout) if cfg.dropout > 0 else nn.Identity()

    def attention_weights(self, z: torch.Tensor) -> torch.Tensor:
        """Softmax weights, shape (B, heads, M, M); rows sum to 1."""
        batch, positions, _ = z.shape

        def split(t: torch.Tensor) -> torch.Tensor:
            return t.view(batch, positions, self.heads, self.head_dim).transpose(1, 2)

        queries, keys = split(self.w_q(z)), split(self.w_k(z))
        logits = queries @ keys.transpose(-2, -1) / self.scale
        if not torch.isfinite(logits).all():
            raise FloatingPointError("non-finite attention logits")
        return torch.softmax(logits, dim=-1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        batch, positions, channels = z.shape
        weights = self.attention_weights(z)
        values = self.w_v(z).view(batch, positions, self.heads, self.head_dim).transpose(1, 2)
        mixed = (weights @ values).transpose(1, 2).reshape(batch, positions, channels)
        u = self.norm_attn(z + self.drop(self.w_u(mixed)))
        p = self.w_2(F.leaky_relu(self.w_1(u), self.slope))
        return self.norm_ffn(u + self.drop(p))


class TransformerEncoder(nn.Module):
    """(B, M, C) -> (B, M, C) with a learnable positional table of shape (M, C)."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.positional = nn.Parameter(
            torch.randn(cfg.map_length, cfg.feature_channels) * 0.02
        )
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.encoder_layers))

    def add_positional(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-2:] != self.positional.shape:
            raise ValueError(
                f"feature map {tuple(z.shape)} does not match positional "
                f"table {tuple(self.positional.shape)}"
            )
        return z + self.positional

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        h = self.add_positional(z)
        for layer in self.layers:
            h = layer(h)
        return h
