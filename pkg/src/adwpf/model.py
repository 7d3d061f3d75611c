"""Full attack model, a plain-CNN baseline, and checkpoint I/O.

Checkpoints are .npz containers: one little-endian array per parameter or
buffer, keyed by its state-dict name, plus a `__meta__` JSON string holding
the format version, the model config, and training provenance. The format
is documented here so other tooling can read it without torch.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from adwpf.backbone import Backbone
from adwpf.core_types import ModelConfig
from adwpf.csra import CsraHead
from adwpf.encoder import TransformerEncoder

CHECKPOINT_FORMAT = 1


class AdwpfModel(nn.Module):
    """Backbone -> encoder -> residual-attention head.

    forward returns (logits (B, W), attention_maps (B, M, C')); the maps
    feed training-time augmentation and the augment-dump tooling.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(cfg)
        self.encoder = TransformerEncoder(cfg)
        self.head = CsraHead(cfg.class_count, cfg.feature_channels, cfg.residual_scale)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        features, attention = self.backbone(x)
        return self.head(self.encoder(features)), attention


class ConvBaseline(nn.Module):
    """Stacked conv/BN/ReLU/pool blocks, flatten, two dense layers.

    The conventional deep-fingerprinting shape with a sigmoid (multi-label)
    output head; shares the class count and stage widths with ModelConfig
    so comparisons hold capacity roughly constant.
    """

    def __init__(self, cfg: ModelConfig, kernel: int = 8, hidden: int = 512):
        super().__init__()
        blocks = []
        length = cfg.trace_length
        in_ch = 1
        for out_ch in cfg.filters:
            blocks += [
                nn.Conv1d(in_ch, out_ch, kernel, padding=kernel // 2),
                nn.BatchNorm1d(out_ch),
                nn.ReLU(),
                nn.MaxPool1d(8, stride=4, padding=2),
            ]
            length += 2 * (kernel // 2) - kernel + 1  # even kernels grow by one
            length = (length + 2 * 2 - 8) // 4 + 1
            in_ch = out_ch
        if length < 1:
            raise ValueError(f"trace_length {cfg.trace_length} too short for the baseline")
        self.features = nn.Sequential(*blocks)
        self.classifier = nn.Sequential(
            nn.Flatten(),
            nn.Linear(cfg.filters[-1] * length, hidden),
            nn.ReLU(),
            nn.Linear(hidden, cfg.class_count),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.features(x.unsqueeze(1)))


def build_model(cfg: ModelConfig, arch: str = "adwpf") -> nn.Module:
    if arch == "adwpf":
        return AdwpfModel(cfg)
    if arch == "baseline":
        return ConvBaseline(cfg)
    raise ValueError(f"unknown architecture {arch!r}")


def model_outputs(model: nn.Module, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
    """Normalize forward results to (logits, attention_maps_or_None)."""
    out = model(x)
    if isinstance(out, tuple):
        return out
    return out, None


def save_checkpoint(path: str | Path, checkpoint: dict) -> None:
    """Write {state_dict, model_config, arch, meta} as the npz container."""
    state = checkpoint["state_dict"]
    arrays = {}
    for name, tensor in state.items():
        arr = tensor.detach().cpu().numpy()
        arrays[name] = arr.astype(arr.dtype.newbyteorder("<"))  # endianness pinned
    meta = {
        "format_version": CHECKPOINT_FORMAT,
        "arch": checkpoint.get("arch", "adwpf"),
        "model_config": dataclasses.asdict(checkpoint["model_config"]),
        "meta": checkpoint.get("meta", {}),
    }
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    np.savez(Path(path), **arrays)


def load_checkpoint(path: str | Path) -> dict:
    """Read the npz container back into tensors plus a ModelConfig."""
    path = Path(path)
    with np.load(path) as bundle:
        if "__meta__" not in bundle:
            raise ValueError(f"{path}: not a model checkpoint (missing __meta__)")
        meta = json.loads(bundle["__meta__"].tobytes().decode("utf-8"))
        if meta.get("format_version") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format_version')}")
        state = {
            name: torch.from_numpy(np.array(bundle[name]))
            for name in bundle.files
            if name != "__meta__"
        }
    cfg_doc = meta["model_config"]
    for key in ("filters", "kernel_sizes", "pool_kernels", "pool_strides"):
        cfg_doc[key] = tuple(cfg_doc[key])
    return {
        "state_dict": state,
        "model_config": ModelConfig(**cfg_doc),
        "arch": meta.get("arch", "adwpf"),
        "meta": meta.get("meta", {}),
    }


def model_from_checkpoint(checkpoint: dict) -> nn.Module:
    model = build_model(checkpoint["model_config"], checkpoint.get("arch", "adwpf"))
    model.load_state_dict(checkpoint["state_dict"])
    model.eval()
    return model


def scores_from_logits(logits: torch.Tensor) -> torch.Tensor:
    """Class probabilities; monotone in the logits, so rankings agree."""
    return torch.sigmoid(logits)
