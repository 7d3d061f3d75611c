"""Training loop, loss wiring, evaluation, and ablation switches.

Each batch runs the original traces forward once; the attention maps from
that pass (detached) drive the crop/mask variants, which go through the
same weights. The step loss is the unweighted mean of the active branch
losses and there is exactly one optimizer step per batch. Evaluation never
augments.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F

from adwpf.augment import augment_batch, random_augment_batch
from adwpf.core_types import AugmentConfig, Dataset, ModelConfig
from adwpf.metrics import MetricsReport, build_report
from adwpf.model import (
    build_model,
    load_checkpoint,
    model_from_checkpoint,
    model_outputs,
    scores_from_logits,
)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-4
    seed: int = 0
    arch: str = "adwpf"               # "adwpf" | "baseline"
    use_crop: bool = True             # attention-crop branch
    use_mask: bool = True             # attention-mask branch
    use_random_aug: bool = False      # random-span branch (excludes the two above)
    use_residual_attention: bool = True  # False forces the head's lambda to 0

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.use_random_aug and (self.use_crop or self.use_mask):
            raise ValueError("random augmentation excludes the attention branches")
        if self.arch not in ("adwpf", "baseline"):
            raise ValueError("arch must be 'adwpf' or 'baseline'")
        if self.arch == "baseline" and (self.use_crop or self.use_mask):
            raise ValueError("attention branches need the attention model")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_map: float
    val_recall5: float
    seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)

    def append(self, stats: EpochStats) -> None:
        if self.epochs and stats.epoch <= self.epochs[-1].epoch:
            raise ValueError("epoch indices must increase")
        self.epochs.append(stats)

    def to_jsonl(self) -> str:
        return "\n".join(
            json.dumps(dataclasses.asdict(e), sort_keys=True) for e in self.epochs
        ) + ("\n" if self.epochs else "")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch_index: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_index}")
        self.epoch = epoch
        self.batch_index = batch_index


def bce_multilabel(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy over batch and classes, stable logit form."""
    # match the logits dtype: the op silently computes at the labels' precision
    return F.binary_cross_entropy_with_logits(logits, labels.to(logits.dtype))


def combined_loss(
    loss_orig: torch.Tensor,
    loss_crop: torch.Tensor | None = None,
    loss_mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Unweighted mean of the active branch losses (pass None for inactive)."""
    branches = [loss for loss in (loss_orig, loss_crop, loss_mask) if loss is not None]
    return sum(branches) / len(branches)


def dataset_tensors(ds: Dataset) -> tuple[torch.Tensor, torch.Tensor, np.ndarray]:
    """(traces float32 (N, L), labels float32 (N, W), tab counts (N,))."""
    traces = np.stack([s.trace.values for s in ds.samples]).astype(np.float32)
    labels = np.stack([s.labels for s in ds.samples]).astype(np.float32)
    tabs = np.array([s.tab_count for s in ds.samples], dtype=np.int64)
    return torch.from_numpy(traces), torch.from_numpy(labels), tabs


def score_dataset(
    model: torch.nn.Module, traces: torch.Tensor, batch_size: int = 256
) -> torch.Tensor:
    """Unaugmented forward pass over a tensor dataset; returns probabilities."""
    model.eval()
    chunks = []
    with torch.inference_mode():
        for start in range(0, traces.shape[0], batch_size):
            logits, _ = model_outputs(model, traces[start : start + batch_size])
            chunks.append(scores_from_logits(logits))
    return torch.cat(chunks)


def _report(model, traces, labels, tabs) -> MetricsReport:
    scores = score_dataset(model, traces)
    return build_report(labels.numpy(), scores.numpy(), tabs)


def train(config: TrainConfig, train_ds: Dataset, val_ds: Dataset) -> tuple[dict, TrainHistory]:
    """Fit the model; returns (best-validation-mAP checkpoint, history).

    Deterministic for a fixed config and seed on one device: model init is
    driven by torch's seeded RNG, batch order and augmentation draws by one
    numpy stream.
    """
    if not train_ds.samples or not val_ds.samples:
        raise ValueError("datasets must be non-empty")
    if train_ds.class_count != val_ds.class_count:
        raise ValueError("train and val class tables disagree")
    if train_ds.class_count != config.model.class_count:
        raise ValueError(
            f"model expects {config.model.class_count} classes, data has {train_ds.class_count}"
        )

    model_cfg = config.model
    if not config.use_residual_attention and model_cfg.residual_scale != 0.0:
        model_cfg = replace(model_cfg, residual_scale=0.0)

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model = build_model(model_cfg, config.arch)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    x_train, y_train, _ = dataset_tensors(train_ds)
    x_val, y_val, tabs_val = dataset_tensors(val_ds)
    n = x_train.shape[0]

    history = TrainHistory()
    best_map = -1.0
    best_state: dict | None = None
    best_epoch = 0

    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        model.train()
        order = rng.permutation(n)
        total_loss = 0.0
        for batch_index, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            logits, maps = model_outputs(model, xb)
            loss_orig = bce_multilabel(logits, yb)
            loss_crop = loss_mask = None
            if config.use_crop or config.use_mask:
                x_crop, x_mask, _infos = augment_batch(xb, maps, config.augment, rng)
                if config.use_crop and config.use_mask:
                    # one forward over both variants, then split the logits
                    both, _ = model_outputs(model, torch.cat([x_crop, x_mask]))
                    loss_crop = bce_multilabel(both[: xb.shape[0]], yb)
                    loss_mask = bce_multilabel(both[xb.shape[0] :], yb)
                elif config.use_crop:
                    loss_crop = bce_multilabel(model_outputs(model, x_crop)[0], yb)
                else:
                    loss_mask = bce_multilabel(model_outputs(model, x_mask)[0], yb)
            elif config.use_random_aug:
                x_rand = random_augment_batch(xb, rng)
                loss_crop = bce_multilabel(model_outputs(model, x_rand)[0], yb)
            loss = combined_loss(loss_orig, loss_crop, loss_mask)
            if not torch.isfinite(loss):
                raise TrainingDiverged(epoch, batch_index)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_loss += loss.detach().item() * len(idx)

        val_report = _report(model, x_val, y_val, tabs_val)
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=total_loss / n,
                val_map=val_report.map,
                val_recall5=val_report.recall_at.get(5, float("nan")),
                seconds=time.perf_counter() - started,
            )
        )
        if val_report.map > best_map:
            best_map = val_report.map
            best_epoch = epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    assert best_state is not None
    checkpoint = {
        "state_dict": best_state,
        "model_config": model_cfg,
        "arch": config.arch,
        "meta": {
            "best_epoch": best_epoch,
            "best_val_map": best_map,
            "seed": config.seed,
            "epochs": config.epochs,
            "batch_size": config.batch_size,
            "learning_rate": config.learning_rate,
            "use_crop": config.use_crop,
            "use_mask": config.use_mask,
            "use_random_aug": config.use_random_aug,
            "use_residual_attention": config.use_residual_attention,
        },
    }
    return checkpoint, history


def evaluate(checkpoint: dict | str, ds: Dataset) -> MetricsReport:
    """Score a dataset with a trained model; no augmentation at eval time.

    Accepts the in-memory checkpoint dict or a path to a saved .npz one.
    """
    if isinstance(checkpoint, (str, bytes)) or hasattr(checkpoint, "__fspath__"):
        checkpoint = load_checkpoint(checkpoint)
    if checkpoint["model_config"].class_count != ds.class_count:
        raise ValueError(
            f"checkpoint has {checkpoint['model_config'].class_count} classes, "
            f"dataset has {ds.class_count}"
        )
    model = model_from_checkpoint(checkpoint)
    traces, labels, tabs = dataset_tensors(ds)
    return _report(model, traces, labels, tabs)
