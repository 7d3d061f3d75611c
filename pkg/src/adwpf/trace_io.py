"""Dataset serialization (JSON lines), deterministic splitting, scale subsetting.

File format: one JSON object per line with keys `id` (string), `dirs`
(array of -1/+1, the unpadded direction stream), `labels` (array of class
ids), `tabs` (int). A sidecar `<stem>.meta.json` carries the class table and
free-form provenance; without it, class ids are inferred from the data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from adwpf.core_types import Dataset, Sample, encode_labels, pad_or_truncate


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


@dataclass(frozen=True)
class SplitSpec:
    """Train/val/test ratios plus the permutation seed."""

    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self) -> None:
        ratios = tuple(float(r) for r in self.ratios)
        object.__setattr__(self, "ratios", ratios)
        if len(ratios) != 3 or any(r < 0 for r in ratios):
            raise ValueError("need three non-negative ratios")
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")


def save_dataset(ds: Dataset, path: str | Path) -> None:
    """Write JSON lines plus the sidecar; deterministic byte-for-byte."""
    path = Path(path)
    with open(path, "w") as fh:
        for sample in ds.samples:
            trace = sample.trace
            record = {
                "id": sample.id,
                "dirs": trace.values[: trace.true_length].tolist(),
                "labels": sorted(sample.label_ids),
                "tabs": sample.tab_count,
            }
            fh.write(json.dumps(record, separators=(",", ":"), sort_keys=True) + "\n")
    sidecar = {
        "format": 1,
        "class_names": ds.class_names,
        "trace_length": ds.trace_length if ds.samples else None,
        "meta": ds.meta,
    }
    with open(sidecar_path(path), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(
    path: str | Path,
    pad_to: int | None = None,
    class_count: int | None = None,
) -> Dataset:
    """Read a JSON-lines dataset, validating every line.

    pad_to overrides the trace length (default: sidecar value, else 10000).
    class_count overrides the class table width when no sidecar exists.
    Malformed lines raise with their 1-based line number.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)

    class_names: list[str] | None = None
    meta: dict = {}
    side = sidecar_path(path)
    if side.exists():
        side_doc = json.loads(side.read_text())
        class_names = list(side_doc.get("class_names", []))
        meta = side_doc.get("meta", {})
        if pad_to is None:
            pad_to = side_doc.get("trace_length")
    if pad_to is None:
        pad_to = 10000

    records = []
    max_label = -1
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            sample_id = doc["id"]
            dirs = doc["dirs"]
            labels = doc["labels"]
            tabs = doc["tabs"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed record ({exc})") from exc
        records.append((lineno, str(sample_id), dirs, labels, int(tabs)))
        if labels:
            max_label = max(max_label, max(int(lab) for lab in labels))
    if not records:
        raise ValueError(f"{path}: empty dataset")

    if class_names is None:
        width = class_count if class_count is not None else max_label + 1
        class_names = [f"class_{i:03d}" for i in range(width)]
    elif class_count is not None and class_count != len(class_names):
        raise ValueError(
            f"class_count {class_count} conflicts with sidecar table of {len(class_names)}"
        )

    samples = []
    for lineno, sample_id, dirs, labels, tabs in records:
        try:
            trace = pad_or_truncate(dirs, pad_to)
            bits = encode_labels(labels, len(class_names))
            samples.append(Sample(id=sample_id, trace=trace, labels=bits, tab_count=tabs))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return Dataset(samples=samples, class_names=class_names, meta=meta)


def _split_sizes(total: int, ratios: tuple[float, float, float]) -> list[int]:
    # floor each share, then hand the leftovers one each to the last splits
    # (test first, then val); reproduces 81284 -> 65027/8128/8129 at 8:1:1
    sizes = [int(total * r) for r in ratios]
    for i in range(total - sum(sizes)):
        sizes[-(i + 1)] += 1
    return sizes


def split_dataset(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint, exhaustive train/val/test partition, pure function of seed."""
    total = len(ds.samples)
    if total < 10:
        raise ValueError(f"need at least 10 samples to split, have {total}")
    sizes = _split_sizes(total, spec.ratios)
    perm = np.random.default_rng(spec.seed).permutation(total)
    bounds = np.cumsum([0] + sizes)
    parts = []
    for name, lo, hi in zip(("train", "val", "test"), bounds[:-1], bounds[1:]):
        picked = np.sort(perm[lo:hi])  # keep original file order inside each split
        meta = dict(ds.meta)
        meta["split"] = {
            "part": name,
            "seed": spec.seed,
            "ratios": list(spec.ratios),
            "split_policy": "uniform",
        }
        parts.append(
            Dataset(
                samples=[ds.samples[i] for i in picked],
                class_names=list(ds.class_names),
                meta=meta,
            )
        )
    return parts[0], parts[1], parts[2]


def subset_by_scale(ds: Dataset, selected: set[int]) -> Dataset:
    """Monitored-set scale-down: keep samples labeled only within `selected`.

    A sample carrying any label outside the selection is discarded entirely
    (its trace would mix monitored and dropped pages). Kept labels are
    re-indexed by ascending original class id.
    """
    if not selected:
        raise ValueError("selection must be non-empty")
    chosen = sorted(set(int(c) for c in selected))
    if chosen[0] < 0 or chosen[-1] >= ds.class_count:
        raise ValueError(f"selection {chosen} outside [0, {ds.class_count})")
    remap = {orig: new for new, orig in enumerate(chosen)}
    keep = set(chosen)
    samples = []
    for sample in ds.samples:
        ids = sample.label_ids
        if not ids <= keep:
            continue
        bits = encode_labels({remap[i] for i in ids}, len(chosen))
        samples.append(
            Sample(id=sample.id, trace=sample.trace, labels=bits, tab_count=sample.tab_count)
        )
    if not samples:
        raise ValueError("no sample survives the selection")
    meta = dict(ds.meta)
    meta["scale_subset"] = {"selected": chosen, "original_class_count": ds.class_count}
    return Dataset(
        samples=samples,
        class_names=[ds.class_names[i] for i in chosen],
        meta=meta,
    )
