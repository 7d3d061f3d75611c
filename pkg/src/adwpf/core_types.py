"""Shared data model: traces, labels, samples, datasets, and config records.

Everything here is an immutable value record; modules downstream never mutate
a sample in place. Traces hold the raw +-1 direction stream padded with
zeros to a fixed length, labels are multi-hot vectors over the class table.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


def _frozen_array(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class DirectionTrace:
    """Fixed-length direction sequence.

    values: int8 array of length L, every element in {-1, 0, +1}; zeros at
    positions >= true_length are padding. Zeros *before* true_length are
    legal too (masking writes them), padding is strictly the suffix.
    """

    values: np.ndarray
    true_length: int

    def __post_init__(self) -> None:
        values = _frozen_array(np.asarray(self.values, dtype=np.int8))
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or values.size == 0:
            raise ValueError("trace must be a non-empty 1-D sequence")
        bad = np.setdiff1d(np.unique(values), [-1, 0, 1])
        if bad.size:
            raise ValueError(f"trace contains values outside {{-1,0,+1}}: {bad.tolist()}")
        if not 0 <= self.true_length <= values.size:
            raise ValueError(f"true_length {self.true_length} out of range for length {values.size}")
        if np.any(values[self.true_length:]):
            raise ValueError("padding region contains non-zero values")

    @property
    def length(self) -> int:
        return int(self.values.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DirectionTrace):
            return NotImplemented
        return self.true_length == other.true_length and np.array_equal(self.values, other.values)


def pad_or_truncate(raw: Sequence[int], length: int) -> DirectionTrace:
    """Fit a raw +-1 direction sequence to exactly `length` cells.

    Shorter sequences get a zero suffix, longer ones keep the prefix (the
    earliest cells carry the page-load onsets). The raw input must not
    contain zeros; zeros exist only as padding.
    """
    if length <= 0:
        raise ValueError("target length must be positive")
    raw_arr = np.asarray(raw, dtype=np.int64)
    if raw_arr.size == 0:
        raise ValueError("empty trace")
    if not np.isin(raw_arr, (-1, 1)).all():
        bad = np.setdiff1d(np.unique(raw_arr), [-1, 1])
        raise ValueError(f"raw trace may contain only -1/+1, found {bad.tolist()}")
    kept = min(raw_arr.size, length)
    values = np.zeros(length, dtype=np.int8)
    values[:kept] = raw_arr[:kept]
    return DirectionTrace(values=values, true_length=kept)


def encode_labels(label_ids: Iterable[int], class_count: int) -> np.ndarray:
    """Multi-hot vector: bits[j] = 1 iff j in label_ids."""
    bits = np.zeros(class_count, dtype=np.uint8)
    for lab in label_ids:
        lab = int(lab)
        if not 0 <= lab < class_count:
            raise ValueError(f"label id {lab} outside [0, {class_count})")
        bits[lab] = 1
    return _frozen_array(bits)


def decode_labels(bits: np.ndarray) -> set[int]:
    return {int(i) for i in np.flatnonzero(bits)}


@dataclass(frozen=True, eq=False)
class Sample:
    """One browsing session: trace plus the set of pages loaded in it."""

    id: str
    trace: DirectionTrace
    labels: np.ndarray  # multi-hot uint8, length = dataset class count
    tab_count: int

    def __post_init__(self) -> None:
        labels = _frozen_array(np.asarray(self.labels, dtype=np.uint8))
        object.__setattr__(self, "labels", labels)
        if labels.ndim != 1:
            raise ValueError("labels must be a 1-D multi-hot vector")
        if not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be binary")
        if self.tab_count < 1:
            raise ValueError("tab_count must be positive")
        if int(labels.sum()) != self.tab_count:
            raise ValueError(
                f"sample {self.id!r}: tab_count {self.tab_count} != {int(labels.sum())} set label bits"
            )

    @property
    def label_ids(self) -> set[int]:
        return decode_labels(self.labels)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.id == other.id
            and self.tab_count == other.tab_count
            and self.trace == other.trace
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(eq=False)
class Dataset:
    """Ordered sample collection sharing one class table."""

    samples: list[Sample]
    class_names: list[str]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n_classes = len(self.class_names)
        seen: set[str] = set()
        lengths = set()
        for sample in self.samples:
            if sample.id in seen:
                raise ValueError(f"duplicate sample id {sample.id!r}")
            seen.add(sample.id)
            if sample.labels.size != n_classes:
                raise ValueError(
                    f"sample {sample.id!r} has {sample.labels.size} label slots, expected {n_classes}"
                )
            lengths.add(sample.trace.length)
        if len(lengths) > 1:
            raise ValueError(f"samples disagree on trace length: {sorted(lengths)}")

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    @property
    def trace_length(self) -> int:
        if not self.samples:
            raise ValueError("empty dataset has no trace length")
        return self.samples[0].trace.length

    def __len__(self) -> int:
        return len(self.samples)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.class_names == other.class_names
            and self.meta == other.meta
            and len(self.samples) == len(other.samples)
            and all(a == b for a, b in zip(self.samples, other.samples))
        )


def _pooled_length(length: int, kernel: int, stride: int) -> int:
    padding = max(0, (kernel - stride) // 2)
    return (length + 2 * padding - kernel) // stride + 1


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    The defaults describe the full-scale model: traces of 10000 cells, four
    residual stages widening 64->160->320->640, pooling kernel 9 / stride 5
    per stage (10000 -> 2000 -> 400 -> 80 -> 16 positions), a 4-layer
    8-head encoder with 4x FFN expansion, and a residual-attention head.
    """

    class_count: int
    trace_length: int = 10000                       # L, model input length
    filters: tuple[int, ...] = (64, 160, 320, 640)  # channels per residual stage
    kernel_sizes: tuple[int, ...] = (3, 3, 3, 3)
    pool_kernels: tuple[int, ...] = (9, 9, 9, 9)
    pool_strides: tuple[int, ...] = (5, 5, 5, 5)
    attn_channels: int = 32                         # C' of the attention-map head
    attn_source: str = "head"                       # "head" (1x1 conv) | "raw" (final features)
    encoder_layers: int = 4
    heads: int = 8
    ffn_multiplier: int = 4
    residual_scale: float = 0.3                     # lambda of the head; 0 disables it
    attn_scale: str = "model"                       # softmax denom: "model"=sqrt(C), "head"=sqrt(C_h)
    leaky_slope: float = 0.01
    dropout: float = 0.0                            # hook only; default off

    def __post_init__(self) -> None:
        if self.class_count < 1:
            raise ValueError("class_count must be >= 1")
        for name in ("filters", "kernel_sizes", "pool_kernels", "pool_strides"):
            seq = getattr(self, name)
            object.__setattr__(self, name, tuple(int(v) for v in seq))
            if len(getattr(self, name)) != 4:
                raise ValueError(f"{name} must list exactly 4 stages")
        if self.feature_channels % self.heads:
            raise ValueError(
                f"channels {self.feature_channels} not divisible by {self.heads} heads"
            )
        if self.attn_source not in ("head", "raw"):
            raise ValueError("attn_source must be 'head' or 'raw'")
        if self.attn_scale not in ("model", "head"):
            raise ValueError("attn_scale must be 'model' or 'head'")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.residual_scale < 0:
            raise ValueError("residual_scale must be >= 0")
        if self.map_length < 1:
            raise ValueError(
                f"pooling chain collapses length {self.trace_length} to nothing"
            )

    @property
    def feature_channels(self) -> int:
        """C: channel width coming out of the last stage."""
        return self.filters[-1]

    @property
    def map_length(self) -> int:
        """M: positions left after the four pooling stages."""
        length = self.trace_length
        for kernel, stride in zip(self.pool_kernels, self.pool_strides):
            length = _pooled_length(length, kernel, stride)
        return length

    @property
    def head_dim(self) -> int:
        return self.feature_channels // self.heads

    @property
    def ffn_dim(self) -> int:
        return self.ffn_multiplier * self.feature_channels

    @property
    def attn_map_count(self) -> int:
        """Number of attention maps the backbone emits."""
        return self.attn_channels if self.attn_source == "head" else self.feature_channels


@dataclass(frozen=True)
class AugmentConfig:
    """Attention-guided augmentation knobs.

    Thresholds are drawn per sample from the given ranges; crop_dilation is
    the number of cells kept on each side beyond the above-threshold span,
    so cropping never cuts tighter than the salient region plus D cells.
    """

    crop_threshold_range: tuple[float, float] = (0.4, 0.6)
    mask_threshold_range: tuple[float, float] = (0.2, 0.5)
    crop_dilation: int = 1000

    def __post_init__(self) -> None:
        for name in ("crop_threshold_range", "mask_threshold_range"):
            lo, hi = getattr(self, name)
            object.__setattr__(self, name, (float(lo), float(hi)))
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"{name} must satisfy 0 <= lo <= hi <= 1, got ({lo}, {hi})")
        if self.crop_dilation < 0:
            raise ValueError("crop_dilation must be >= 0")
