"""Attention-guided crop/mask augmentation plus the random-span baseline.

Pipeline per sample: pick one attention map, linearly upsample it from M
positions back to trace length L (endpoints aligned), min-max normalize,
then threshold. Crop keeps the span between the first and last
above-threshold cell, dilated by D cells on each side, zeroing the rest;
mask zeroes exactly the above-threshold cells. Both keep the length at L
and never produce values outside {-1, 0, +1} on direction input.

Attention maps are detached before thresholding: indicators are
non-differentiable, so gradients reach the model only through the
augmented traces' forward passes.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F

from adwpf.core_types import AugmentConfig


def upsample_linear(values: torch.Tensor, length: int) -> torch.Tensor:
    """Stretch an M-vector to `length` by linear interpolation, endpoints aligned."""
    if values.dim() != 1:
        raise ValueError("expected a 1-D map")
    if values.shape[0] < 2:
        raise ValueError("need at least 2 positions to interpolate")
    if length < values.shape[0]:
        raise ValueError("target length must be >= map length")
    out = F.interpolate(
        values.reshape(1, 1, -1).float(), size=length, mode="linear", align_corners=True
    )
    return out.reshape(length)


def normalize_minmax(values: torch.Tensor) -> torch.Tensor:
    """Affine rescale to [0,1]; a constant map collapses to all zeros."""
    lo, hi = values.min(), values.max()
    if hi == lo:
        return torch.zeros_like(values)
    return (values - lo) / (hi - lo)


def crop_indicator(a_star: torch.Tensor, threshold: float) -> torch.Tensor:
    """1 where the normalized map strictly exceeds the threshold."""
    return (a_star > threshold).to(torch.uint8)


def mask_indicator(a_star: torch.Tensor, threshold: float) -> torch.Tensor:
    """0 where the normalized map strictly exceeds the threshold, else 1."""
    return (a_star <= threshold).to(torch.uint8)


def attention_crop(
    x: torch.Tensor, s_c: torch.Tensor, dilation: int
) -> tuple[torch.Tensor, bool]:
    """Keep the dilated span of set indicator bits, zero outside.

    The span runs from the first to the last set bit, widened by `dilation`
    cells on each side (clamped to the trace). An all-zero indicator means
    the attention map was degenerate; the trace passes through unchanged
    and the second return value flags it.
    """
    if x.shape != s_c.shape:
        raise ValueError(f"trace {tuple(x.shape)} and indicator {tuple(s_c.shape)} disagree")
    hot = torch.nonzero(s_c, as_tuple=False)
    if hot.numel() == 0:
        return x.clone(), True
    lo = max(0, int(hot[0]) - dilation)
    hi = min(x.shape[0] - 1, int(hot[-1]) + dilation)
    out = torch.zeros_like(x)
    out[lo : hi + 1] = x[lo : hi + 1]
    return out, False


def attention_mask(x: torch.Tensor, s_m: torch.Tensor) -> tuple[torch.Tensor, bool]:
    """Elementwise product with the mask indicator; flags an all-zero mask."""
    if x.shape != s_m.shape:
        raise ValueError(f"trace {tuple(x.shape)} and indicator {tuple(s_m.shape)} disagree")
    degenerate = bool((s_m == 0).all())
    return x * s_m, degenerate


def augment_pair(
    x: torch.Tensor,
    attention_maps: torch.Tensor,
    cfg: AugmentConfig,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, torch.Tensor, dict]:
    """Build (cropped, masked) variants of one trace from its attention maps.

    attention_maps is (M, C'); one column k is selected uniformly, and the
    crop/mask thresholds are drawn uniformly from the config ranges. The
    info dict records the draws and any degenerate-attention fallbacks.
    Deterministic given the rng state.
    """
    if attention_maps.dim() != 2 or attention_maps.shape[1] == 0:
        raise ValueError("attention_maps must be (M, C') with C' >= 1")
    maps = attention_maps.detach()
    k = int(rng.integers(0, maps.shape[1]))
    phi_crop = float(rng.uniform(*cfg.crop_threshold_range))
    phi_mask = float(rng.uniform(*cfg.mask_threshold_range))
    a_star = normalize_minmax(upsample_linear(maps[:, k], x.shape[0]))
    x_crop, crop_degenerate = attention_crop(
        x, crop_indicator(a_star, phi_crop), cfg.crop_dilation
    )
    x_mask, mask_degenerate = attention_mask(x, mask_indicator(a_star, phi_mask))
    info = {
        "map_index": k,
        "phi_crop": phi_crop,
        "phi_mask": phi_mask,
        "crop_degenerate": crop_degenerate,
        "mask_degenerate": mask_degenerate,
    }
    return x_crop, x_mask, info


def augment_batch(
    batch: torch.Tensor,
    attention_maps: torch.Tensor,
    cfg: AugmentConfig,
    rng: np.random.Generator,
) -> tuple[torch.Tensor, torch.Tensor, list[dict]]:
    """augment_pair over a (B, L) batch with (B, M, C') maps, one rng stream."""
    crops, masks, infos = [], [], []
    for i in range(batch.shape[0]):
        x_crop, x_mask, info = augment_pair(batch[i], attention_maps[i], cfg, rng)
        crops.append(x_crop)
        masks.append(x_mask)
        infos.append(info)
    return torch.stack(crops), torch.stack(masks), infos


def random_augment(x: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """Attention-free baseline: one random contiguous span, masked or kept.

    Span length is uniform in [0.1L, 0.5L] (whole cells), placement
    uniform. With probability 1/2 the span is zeroed (random mask),
    otherwise everything outside it is zeroed (random crop).
    """
    length = x.shape[0]
    span = int(round(rng.uniform(0.1, 0.5) * length))
    span = max(1, min(span, length))
    start = int(rng.integers(0, length - span + 1))
    out = x.clone()
    if rng.random() < 0.5:
        out[start : start + span] = 0
    else:
        keep = out[start : start + span].clone()
        out = torch.zeros_like(x)
        out[start : start + span] = keep
    return out


def random_augment_batch(batch: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    return torch.stack([random_augment(batch[i], rng) for i in range(batch.shape[0])])
