"""1D residual CNN over direction traces.

Four stages, each three conv-BN-LeakyReLU blocks with one additive skip
around the group (1x1 projection when widths change), then max pooling.
The last stage also taps its pre-pooling activations for attention maps.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from adwpf.core_types import ModelConfig


def _pool_padding(kernel: int, stride: int) -> int:
    # keeps pooled length at floor(L/stride) for the configured kernels
    return max(0, (kernel - stride) // 2)


class ResidualStage(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, slope: float):
        super().__init__()
        pad = kernel // 2  # stride-1 "same" convs
        self.blocks = nn.Sequential(
            nn.Conv1d(in_ch, out_ch, kernel, padding=pad),
            nn.BatchNorm1d(out_ch),
            nn.LeakyReLU(slope),
            nn.Conv1d(out_ch, out_ch, kernel, padding=pad),
            nn.BatchNorm1d(out_ch),
            nn.LeakyReLU(slope),
            nn.Conv1d(out_ch, out_ch, kernel, padding=pad),
            nn.BatchNorm1d(out_ch),
            nn.LeakyReLU(slope),
        )
        self.skip = nn.Conv1d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.blocks(x) + self.skip(x)


class Backbone(nn.Module):
    """(B, L) direction batch -> feature map (B, M, C), attention maps (B, M, C')."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        widths = (1,) + cfg.filters
        self.stages = nn.ModuleList(
            ResidualStage(widths[i], widths[i + 1], cfg.kernel_sizes[i], cfg.leaky_slope)
            for i in range(4)
        )
        self.pools = nn.ModuleList(
            nn.MaxPool1d(k, stride=s, padding=_pool_padding(k, s))
            for k, s in zip(cfg.pool_kernels, cfg.pool_strides)
        )
        if cfg.attn_source == "head":
            self.attn_head = nn.Conv1d(cfg.feature_channels, cfg.attn_channels, 1)
        else:
            self.attn_head = None

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if x.dim() != 2 or x.shape[1] != self.cfg.trace_length:
            raise ValueError(
                f"expected batch shape (B, {self.cfg.trace_length}), got {tuple(x.shape)}"
            )
        h = x.unsqueeze(1)
        for i in range(3):
            h = self.pools[i](self.stages[i](h))
        pre_pool = self.stages[3](h)
        h = self.pools[3](pre_pool)
        features = h.transpose(1, 2)  # (B, M, C)
        if self.attn_head is not None:
            attn = self.pools[3](F.relu(self.attn_head(pre_pool)))
        else:
            attn = F.relu(h)  # raw final channels, clamped non-negative
        return features, attn.transpose(1, 2)
