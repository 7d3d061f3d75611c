"""Batch command-line surface.

Commands: synth, split, train, eval, ablate, augment-dump. Configuration is
a flat key=value file with dotted section prefixes (model.*, train.*,
augment.*, data.*, gen.*, run.*); command-line flags override file values
and the fully resolved snapshot lands in every run directory. Outputs are
staged in a temp location and renamed into place only on success, and
existing outputs are never overwritten without --force.

Relative --out paths resolve under $ADWPF_RUN_DIR when it is set.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import shutil
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from adwpf.augment import augment_pair
from adwpf.core_types import AugmentConfig, Dataset, ModelConfig
from adwpf.metrics import MetricsReport, render_report
from adwpf.model import build_model, load_checkpoint, model_from_checkpoint, save_checkpoint
from adwpf.synth_gen import GeneratorConfig, generate_dataset
from adwpf.trace_io import SplitSpec, load_dataset, save_dataset, sidecar_path, split_dataset
from adwpf.training import TrainConfig, dataset_tensors, evaluate, train

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


class RunConfig:
    """Flat, string-valued key=value store with typed getters."""

    def __init__(self, values: dict[str, str] | None = None):
        self.values: dict[str, str] = dict(values or {})

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        values: dict[str, str] = {}
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
        return cls(values)

    def override(self, key: str, value) -> None:
        if value is not None:
            self.values[key] = str(value)

    def get(self, key: str, default: str | None = None) -> str | None:
        return self.values.get(key, default)

    def get_int(self, key: str, default: int | None = None) -> int | None:
        raw = self.values.get(key)
        return default if raw is None else int(raw)

    def get_float(self, key: str, default: float | None = None) -> float | None:
        raw = self.values.get(key)
        return default if raw is None else float(raw)

    def get_bool(self, key: str, default: bool | None = None) -> bool | None:
        raw = self.values.get(key)
        if raw is None:
            return default
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"{key}: cannot read {raw!r} as a boolean")

    def get_ints(self, key: str) -> tuple[int, ...] | None:
        raw = self.values.get(key)
        return None if raw is None else tuple(int(v) for v in raw.split(","))

    def get_floats(self, key: str) -> tuple[float, ...] | None:
        raw = self.values.get(key)
        return None if raw is None else tuple(float(v) for v in raw.split(","))

    def to_text(self) -> str:
        return "".join(f"{k}={self.values[k]}\n" for k in sorted(self.values))


def _resolve_out(out: str) -> Path:
    path = Path(out)
    if path.is_absolute():
        return path
    return Path(os.environ.get("ADWPF_RUN_DIR", ".")) / path


@contextmanager
def _staged_dir(final: Path, force: bool):
    """Build the run directory aside, rename over on success only."""
    if final.exists() and not force:
        raise FileExistsError(f"{final} exists; pass --force to overwrite")
    tmp = final.parent / f".{final.name}.tmp{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        yield tmp
        if final.exists():
            shutil.rmtree(final)
        os.replace(tmp, final)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)


def _staged_file(final: Path, force: bool, write):
    if final.exists() and not force:
        raise FileExistsError(f"{final} exists; pass --force to overwrite")
    final.parent.mkdir(parents=True, exist_ok=True)
    tmp = final.parent / f".{final.name}.tmp{os.getpid()}"
    try:
        write(tmp)
        os.replace(tmp, final)
    finally:
        if tmp.exists():
            tmp.unlink()


def _parse_tabs_dist(text: str) -> dict[int, float]:
    dist = {}
    for part in text.split(","):
        tabs, weight = part.split(":")
        dist[int(tabs)] = float(weight)
    return dist


def _generator_config(cfg: RunConfig, trace_length: int | None = None) -> GeneratorConfig:
    kwargs = {}
    if trace_length is not None:
        kwargs["trace_length"] = trace_length
    mapping = {
        "trace_length": cfg.get_int("gen.trace_length"),
        "site_size": cfg.get_int("gen.site_size"),
        "shared_prefix_bursts": cfg.get_int("gen.shared_prefix_bursts"),
        "bursts_per_page": cfg.get_ints("gen.bursts_per_page"),
        "request_length_range": cfg.get_ints("gen.request_length_range"),
        "response_length_range": cfg.get_ints("gen.response_length_range"),
        "jitter": cfg.get_float("gen.jitter"),
        "gap_fraction_range": cfg.get_floats("gen.gap_fraction_range"),
        "open_world": cfg.get_bool("gen.open_world"),
        "keep_provenance": cfg.get_bool("gen.keep_provenance"),
    }
    for key, value in mapping.items():
        if value is not None:
            kwargs[key] = value
    return GeneratorConfig(**kwargs)


def _model_config(cfg: RunConfig, class_count: int) -> ModelConfig:
    kwargs = {"class_count": cfg.get_int("model.class_count", class_count)}
    ints = {
        "trace_length": "model.trace_length",
        "attn_channels": "model.attn_channels",
        "encoder_layers": "model.encoder_layers",
        "heads": "model.heads",
        "ffn_multiplier": "model.ffn_multiplier",
    }
    for field, key in ints.items():
        value = cfg.get_int(key)
        if value is not None:
            kwargs[field] = value
    for field in ("filters", "kernel_sizes", "pool_kernels", "pool_strides"):
        value = cfg.get_ints(f"model.{field}")
        if value is not None:
            kwargs[field] = value
    for field in ("residual_scale", "leaky_slope", "dropout"):
        value = cfg.get_float(f"model.{field}")
        if value is not None:
            kwargs[field] = value
    for field in ("attn_source", "attn_scale"):
        value = cfg.get(f"model.{field}")
        if value is not None:
            kwargs[field] = value
    return ModelConfig(**kwargs)


def _augment_config(cfg: RunConfig) -> AugmentConfig:
    kwargs = {}
    crop_range = cfg.get_floats("augment.crop_threshold_range")
    mask_range = cfg.get_floats("augment.mask_threshold_range")
    dilation = cfg.get_int("augment.crop_dilation")
    if crop_range is not None:
        kwargs["crop_threshold_range"] = crop_range
    if mask_range is not None:
        kwargs["mask_threshold_range"] = mask_range
    if dilation is not None:
        kwargs["crop_dilation"] = dilation
    return AugmentConfig(**kwargs)


def _train_config(cfg: RunConfig, model_cfg: ModelConfig) -> TrainConfig:
    return TrainConfig(
        model=model_cfg,
        augment=_augment_config(cfg),
        epochs=cfg.get_int("train.epochs", 100),
        batch_size=cfg.get_int("train.batch_size", 64),
        learning_rate=cfg.get_float("train.learning_rate", 1e-4),
        seed=cfg.get_int("train.seed", 0),
        arch=cfg.get("train.arch", "adwpf"),
        use_crop=cfg.get_bool("train.use_crop", True),
        use_mask=cfg.get_bool("train.use_mask", True),
        use_random_aug=cfg.get_bool("train.use_random_aug", False),
        use_residual_attention=cfg.get_bool("train.use_residual_attention", True),
    )


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.override("train.seed", args.seed)
        cfg.override("gen.seed", args.seed)
    if getattr(args, "data", None) is not None:
        cfg.override("data.path", args.data)
    if getattr(args, "out", None) is not None:
        cfg.override("run.out", args.out)
    return cfg


def _split_from_config(cfg: RunConfig, ds: Dataset):
    ratios = cfg.get_floats("data.ratios") or (0.8, 0.1, 0.1)
    seed = cfg.get_int("data.split_seed", 0)
    return split_dataset(ds, SplitSpec(ratios=tuple(ratios), seed=seed))


def _write_report(report: MetricsReport, directory: Path, stem: str) -> None:
    (directory / f"{stem}.json").write_text(report.to_json() + "\n")
    (directory / f"{stem}.txt").write_text(render_report(report) + "\n")


def _cmd_synth(args) -> int:
    cfg = _load_config(args)
    seed = cfg.get_int("gen.seed", 0)
    classes = args.classes if args.classes is not None else cfg.get_int("gen.classes")
    samples = args.samples if args.samples is not None else cfg.get_int("gen.samples")
    if classes is None or samples is None:
        raise ValueError("synth needs --classes and --samples")
    tabs_dist = None
    raw_dist = args.tabs_dist or cfg.get("gen.tabs_dist")
    if raw_dist:
        tabs_dist = _parse_tabs_dist(raw_dist)
    gen_cfg = _generator_config(cfg)
    ds = generate_dataset(classes, samples, seed=seed, cfg=gen_cfg, tab_distribution=tabs_dist)
    out = _resolve_out(args.out)
    side = sidecar_path(out)
    for target in (out, side):
        if target.exists() and not args.force:
            raise FileExistsError(f"{target} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.parent / f".{out.name}.tmp{os.getpid()}"
    try:
        save_dataset(ds, tmp)  # writes the sidecar next to tmp
        os.replace(sidecar_path(tmp), side)
        os.replace(tmp, out)
    finally:
        for leftover in (tmp, sidecar_path(tmp)):
            if leftover.exists():
                leftover.unlink()
    print(f"wrote {len(ds)} samples to {out}")
    return 0


def _cmd_split(args) -> int:
    cfg = _load_config(args)
    ds = load_dataset(cfg.get("data.path") or args.data)
    if args.seed is not None:
        cfg.override("data.split_seed", args.seed)
    parts = _split_from_config(cfg, ds)
    out = _resolve_out(args.out)
    with _staged_dir(out, args.force) as tmp:
        for name, part in zip(("train", "val", "test"), parts):
            save_dataset(part, tmp / f"{name}.jsonl")
        (tmp / "config.snapshot.cfg").write_text(cfg.to_text())
    sizes = "/".join(str(len(p)) for p in parts)
    print(f"split {len(ds)} samples into {sizes} under {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args)
    data_path = cfg.get("data.path")
    if not data_path:
        raise ValueError("train needs data.path (or --data)")
    ds = load_dataset(data_path)
    train_ds, val_ds, test_ds = _split_from_config(cfg, ds)
    model_cfg = _model_config(cfg, ds.class_count)
    train_cfg = _train_config(cfg, model_cfg)
    checkpoint, history = train(train_cfg, train_ds, val_ds)
    test_report = evaluate(checkpoint, test_ds)
    out = _resolve_out(cfg.get("run.out", "run"))
    with _staged_dir(out, args.force) as tmp:
        (tmp / "config.snapshot.cfg").write_text(cfg.to_text())
        save_checkpoint(tmp / "best.npz", checkpoint)
        (tmp / "history.jsonl").write_text(history.to_jsonl())
        _write_report(test_report, tmp, "test_report")
    print(
        f"trained {train_cfg.epochs} epochs; best val mAP "
        f"{checkpoint['meta']['best_val_map']:.4f} at epoch "
        f"{checkpoint['meta']['best_epoch']}; test mAP {test_report.map:.4f}; run at {out}"
    )
    return 0


def _cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    report = evaluate(args.ckpt, ds)
    out = _resolve_out(args.out) if args.out else Path(args.ckpt).parent
    out.mkdir(parents=True, exist_ok=True)
    for suffix in (".json", ".txt"):
        target = out / f"eval_report{suffix}"
        if target.exists() and not args.force:
            raise FileExistsError(f"{target} exists; pass --force to overwrite")
    _staged_file(out / "eval_report.json", args.force,
                 lambda tmp: tmp.write_text(report.to_json() + "\n"))
    _staged_file(out / "eval_report.txt", args.force,
                 lambda tmp: tmp.write_text(render_report(report) + "\n"))
    print(render_report(report))
    return 0


_ABLATION_FLAGS = {
    "ra": "use_random_aug",
    "ac": "use_crop",
    "am": "use_mask",
    "ratt": "use_residual_attention",
}


def grid_flags(token: str) -> dict[str, bool]:
    """'ac+am+ratt' -> ablation flag dict; 'none' turns everything off."""
    flags = {name: False for name in _ABLATION_FLAGS.values()}
    if token != "none":
        for part in token.split("+"):
            if part not in _ABLATION_FLAGS:
                raise ValueError(f"unknown ablation token {part!r} in {token!r}")
            flags[_ABLATION_FLAGS[part]] = True
    return flags


def _cmd_ablate(args) -> int:
    cfg = _load_config(args)
    data_path = cfg.get("data.path")
    if not data_path:
        raise ValueError("ablate needs data.path (or --data)")
    ds = load_dataset(data_path)
    train_ds, val_ds, test_ds = _split_from_config(cfg, ds)
    model_cfg = _model_config(cfg, ds.class_count)
    tokens = [t.strip() for t in args.grid.split(",") if t.strip()]
    if not tokens:
        raise ValueError("empty --grid")
    out = _resolve_out(cfg.get("run.out", "ablation"))
    results: dict[str, MetricsReport] = {}
    with _staged_dir(out, args.force) as tmp:
        (tmp / "config.snapshot.cfg").write_text(cfg.to_text())
        for token in tokens:
            sub_cfg = dataclasses.replace(_train_config(cfg, model_cfg), **grid_flags(token))
            checkpoint, history = train(sub_cfg, train_ds, val_ds)
            report = evaluate(checkpoint, test_ds)
            results[token] = report
            sub_dir = tmp / token.replace("+", "_")
            sub_dir.mkdir()
            save_checkpoint(sub_dir / "best.npz", checkpoint)
            (sub_dir / "history.jsonl").write_text(history.to_jsonl())
            _write_report(report, sub_dir, "test_report")
        lines = [f"{'variant':<16} {'mAP':>8} {'R@5':>8} {'AP@5':>8}"]
        for token in tokens:
            rep = results[token]
            lines.append(
                f"{token:<16} {rep.map:>8.4f} {rep.recall_at[5]:>8.4f} {rep.ap_at[5]:>8.4f}"
            )
        table = "\n".join(lines) + "\n"
        (tmp / "ablation.txt").write_text(table)
        (tmp / "ablation.json").write_text(json.dumps(
            {t: results[t].to_dict() for t in tokens}, indent=2, sort_keys=True
        ) + "\n")
    print(f"ablation over {tokens} done; table at {out / 'ablation.txt'}")
    return 0


def _cmd_augment_dump(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import torch

    cfg = _load_config(args)
    ds = load_dataset(cfg.get("data.path") or args.data)
    if args.ckpt:
        checkpoint = load_checkpoint(args.ckpt)
        model = model_from_checkpoint(checkpoint)
        model_cfg = checkpoint["model_config"]
    elif args.untrained:
        model_cfg = _model_config(cfg, ds.class_count)
        model = build_model(model_cfg)
        model.eval()
    else:
        raise ValueError("augment-dump needs --ckpt or --untrained")
    if model_cfg.trace_length != ds.trace_length:
        raise ValueError(
            f"model expects traces of {model_cfg.trace_length}, data has {ds.trace_length}"
        )
    aug_cfg = _augment_config(cfg)
    seed = cfg.get_int("train.seed", 0)
    rng = np.random.default_rng(seed)
    count = min(args.samples, len(ds))
    traces, _, _ = dataset_tensors(ds)
    out = _resolve_out(args.out)

    def strip_plot(path: Path, values: np.ndarray, title: str) -> None:
        fig, ax = plt.subplots(figsize=(10, 1.8))
        ax.plot(values, linewidth=0.4)
        ax.set_ylim(-1.3, 1.3)
        ax.set_title(title, fontsize=9)
        ax.set_xlabel("position")
        ax.set_ylabel("direction")
        fig.tight_layout()
        fig.savefig(path, dpi=110)
        plt.close(fig)

    with _staged_dir(out, args.force) as tmp:
        (tmp / "config.snapshot.cfg").write_text(cfg.to_text())
        with torch.inference_mode():
            for i in range(count):
                sample = ds.samples[i]
                x = traces[i]
                _, maps = model(x.unsqueeze(0))
                x_crop, x_mask, info = augment_pair(x, maps[0], aug_cfg, rng)
                variants = [
                    ("1_original", x),
                    ("2_cropped", x_crop),
                    ("3_masked", x_mask),
                ]
                for row, (kind, values) in enumerate(variants, start=1):
                    arr = values.numpy().astype(int)
                    doc = {
                        "id": sample.id,
                        "variant": kind.split("_", 1)[1],
                        "row": row,
                        "dirs": arr.tolist(),
                        "augment_info": {k: (bool(v) if isinstance(v, bool) else v)
                                          for k, v in info.items()},
                    }
                    (tmp / f"sample{i:03d}_{kind}.json").write_text(
                        json.dumps(doc) + "\n"
                    )
                    strip_plot(
                        tmp / f"sample{i:03d}_{kind}.png",
                        arr,
                        f"{sample.id} {kind.split('_', 1)[1]}",
                    )
    print(f"dumped {count} samples (original/cropped/masked) to {out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adwpf", description="multi-tab webpage fingerprinting toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, config=True, seed=True, force=True):
        if config:
            p.add_argument("--config", help="key=value config file")
        if seed:
            p.add_argument("--seed", type=int, help="override the seed")
        if force:
            p.add_argument("--force", action="store_true", help="overwrite existing outputs")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--classes", type=int, help="number of webpage classes")
    p.add_argument("--samples", type=int, help="number of sessions")
    p.add_argument("--tabs-dist", help="tab-count weights, e.g. 1:0.4,2:0.35,3:0.25")
    p.add_argument("--out", required=True, help="output .jsonl path")

    p = sub.add_parser("split", help="deterministic train/val/test split")
    common(p)
    p.add_argument("--data", help="input .jsonl dataset")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--data", help="override data.path")
    p.add_argument("--out", help="override run.out")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, config=False, seed=False)
    p.add_argument("--ckpt", required=True, help="checkpoint .npz")
    p.add_argument("--data", required=True, help="dataset .jsonl to score")
    p.add_argument("--out", help="report directory (default: beside the checkpoint)")

    p = sub.add_parser("ablate", help="train once per ablation variant")
    common(p)
    p.add_argument("--data", help="override data.path")
    p.add_argument("--out", help="override run.out")
    p.add_argument("--grid", required=True,
                   help="comma list of variants from none,ra,ac,am,ratt (e.g. none,ac+am)")

    p = sub.add_parser("augment-dump", help="write augmented traces and strip plots")
    common(p)
    p.add_argument("--data", help="dataset .jsonl to draw samples from")
    p.add_argument("--ckpt", help="trained checkpoint for attention maps")
    p.add_argument("--untrained", action="store_true",
                   help="use a freshly initialized model instead of --ckpt")
    p.add_argument("--samples", type=int, default=2, help="how many samples to dump")
    p.add_argument("--out", required=True, help="output directory")
    return parser


_COMMANDS = {
    "synth": _cmd_synth,
    "split": _cmd_split,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "augment-dump": _cmd_augment_dump,
}


def dispatch(argv: list[str]) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        print(f"adwpf: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
