"""Residual-attention multi-label head.

Per class i the encoder output o (M positions, C channels) is pooled two
ways: a class-agnostic mean g over positions, and a class-specific vector
v^i that weights positions by softmax(o_j . m_i). The classifier feature is
r^i = g + lambda * v^i and the logit is m_i . r^i, so the same weight row
m_i plays attention query and classifier. lambda=0 reduces the head to a
plain global-average-pooling linear classifier.
"""

from __future__ import annotations

import torch
import torch.nn as nn


def class_attention(o: torch.Tensor, m: torch.Tensor) -> torch.Tensor:
    """Per-class softmax over positions: (..., M, C), (W, C) -> (..., W, M)."""
    logits = torch.einsum("...mc,wc->...wm", o, m)
    logits = logits - logits.max(dim=-1, keepdim=True).values  # overflow guard
    return torch.softmax(logits, dim=-1)


def csra_features(o: torch.Tensor, s: torch.Tensor, residual_scale: float) -> torch.Tensor:
    """Blend mean pooling with class-specific attention pooling.

    v^i = sum_j s_j^i o_j, g = mean_j o_j, r^i = g + residual_scale * v^i.
    Shapes: o (..., M, C), s (..., W, M) -> (..., W, C).
    """
    v = torch.einsum("...wm,...mc->...wc", s, o)
    g = o.mean(dim=-2).unsqueeze(-2)
    return g + residual_scale * v


def head_logits(o: torch.Tensor, m: torch.Tensor, residual_scale: float) -> torch.Tensor:
    """logit_i = m_i . r^i; sigmoid of this is the class probability."""
    s = class_attention(o, m)
    r = csra_features(o, s, residual_scale)
    return torch.einsum("...wc,wc->...w", r, m)


class CsraHead(nn.Module):
    def __init__(self, class_count: int, channels: int, residual_scale: float):
        super().__init__()
        self.residual_scale = float(residual_scale)
        bound = channels ** -0.5
        self.weight = nn.Parameter(torch.empty(class_count, channels).uniform_(-bound, bound))

    def forward(self, o: torch.Tensor) -> torch.Tensor:
        return head_logits(o, self.weight, self.residual_scale)
