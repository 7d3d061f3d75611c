"""Threshold-free multi-label ranking metrics: Recall@k, P@k, AP@k, mAP.

All metrics depend only on the score *ranking*, never on score magnitudes,
so they are invariant under any strictly increasing transform. Ties are
broken deterministically by ascending index (class index when ranking
classes within a sample, sample index when ranking samples within a class).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np


def _class_ranking(scores: np.ndarray) -> np.ndarray:
    # stable sort on negated scores keeps ascending index among ties
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def recall_at_k(labels: np.ndarray, scores: np.ndarray, k: int) -> float:
    """Fraction of a sample's true labels found in its top-k scored classes."""
    labels = np.asarray(labels)
    if k < 1:
        raise ValueError("k must be >= 1")
    positives = int(labels.sum())
    if positives == 0:
        raise ValueError("sample has no positive labels")
    top = _class_ranking(scores)[:k]
    return float(labels[top].sum()) / positives


def ap_at_k(labels: np.ndarray, scores: np.ndarray, k: int) -> float:
    """Average precision over the top-k ranked classes of one sample.

    AP@k = (1 / min(|positives|, k)) * sum_{i<=k} P@i * rel(i), where P@i is
    precision over the first i ranks and rel(i) marks a true label at rank i.
    """
    labels = np.asarray(labels)
    if k < 1:
        raise ValueError("k must be >= 1")
    positives = int(labels.sum())
    if positives == 0:
        raise ValueError("sample has no positive labels")
    depth = min(k, labels.size)
    hits = labels[_class_ranking(scores)[:depth]].astype(np.float64)
    precision = np.cumsum(hits) / np.arange(1, depth + 1)
    return float((precision * hits).sum() / min(positives, k))


def mean_average_precision(
    all_labels: np.ndarray, all_scores: np.ndarray
) -> tuple[float, list[int]]:
    """Uninterpolated mAP over classes; samples are ranked per class.

    For each class the N samples are sorted by that class's score and AP is
    the mean of precision-at-rank over the positive ranks. Classes with no
    positive sample cannot define an AP; they are skipped with a warning and
    returned so callers can report them.
    """
    labels = np.asarray(all_labels)
    scores = np.asarray(all_scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 2:
        raise ValueError(f"labels {labels.shape} and scores {scores.shape} must both be (N, W)")
    aps = []
    skipped: list[int] = []
    for class_id in range(labels.shape[1]):
        order = np.argsort(-scores[:, class_id], kind="stable")
        ranked = labels[order, class_id].astype(np.float64)
        positives = ranked.sum()
        if positives == 0:
            skipped.append(class_id)
            continue
        precision = np.cumsum(ranked) / np.arange(1, ranked.size + 1)
        aps.append(float(precision[ranked > 0].mean()))
    if skipped:
        warnings.warn(f"mAP skipped {len(skipped)} class(es) with no positive sample: {skipped}")
    if not aps:
        raise ValueError("every class is all-negative; mAP undefined")
    return float(np.mean(aps)), skipped


RECALL_KS = (5, 10, 15, 20)
AP_KS = (1, 2, 3, 4, 5)


@dataclass
class MetricsReport:
    map: float
    recall_at: dict[int, float]
    ap_at: dict[int, float]
    sample_count: int
    skipped_classes: list[int] = field(default_factory=list)
    per_tab: dict[int, "MetricsReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "map": self.map,
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "ap_at": {str(k): v for k, v in self.ap_at.items()},
            "sample_count": self.sample_count,
            "skipped_classes": self.skipped_classes,
        }
        if self.per_tab:
            out["per_tab"] = {str(t): r.to_dict() for t, r in self.per_tab.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def build_report(
    all_labels: np.ndarray,
    all_scores: np.ndarray,
    tab_counts: np.ndarray | None = None,
    recall_ks: tuple[int, ...] = RECALL_KS,
    ap_ks: tuple[int, ...] = AP_KS,
    _nested: bool = False,
) -> MetricsReport:
    """Aggregate sample-level Recall@k / AP@k plus dataset mAP.

    Recall@k and AP@k are averaged over samples; mAP ranks samples per
    class. When tab_counts is given the report carries one sub-report per
    tab count present, computed on that subset alone.
    """
    labels = np.asarray(all_labels)
    scores = np.asarray(all_scores, dtype=np.float64)
    map_value, skipped = mean_average_precision(labels, scores)
    recall = {
        k: float(np.mean([recall_at_k(y, s, k) for y, s in zip(labels, scores)]))
        for k in recall_ks
    }
    ap = {
        k: float(np.mean([ap_at_k(y, s, k) for y, s in zip(labels, scores)]))
        for k in ap_ks
    }
    report = MetricsReport(
        map=map_value,
        recall_at=recall,
        ap_at=ap,
        sample_count=int(labels.shape[0]),
        skipped_classes=skipped,
    )
    if tab_counts is not None and not _nested:
        tab_counts = np.asarray(tab_counts)
        for tabs in sorted(set(int(t) for t in tab_counts)):
            pick = tab_counts == tabs
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # subsets routinely miss classes
                report.per_tab[tabs] = build_report(
                    labels[pick], scores[pick], None, recall_ks, ap_ks, _nested=True
                )
    return report


def render_report(report: MetricsReport) -> str:
    """Aligned, human-readable table; one row per scope (all + per tab)."""
    recall_ks = sorted(report.recall_at)
    ap_ks = sorted(report.ap_at)
    headers = (
        ["scope", "samples", "mAP"]
        + [f"R@{k}" for k in recall_ks]
        + [f"AP@{k}" for k in ap_ks]
    )
    rows = [headers]

    def fmt(scope: str, rep: MetricsReport) -> list[str]:
        return (
            [scope, str(rep.sample_count), f"{rep.map:.4f}"]
            + [f"{rep.recall_at[k]:.4f}" for k in recall_ks]
            + [f"{rep.ap_at[k]:.4f}" for k in ap_ks]
        )

    rows.append(fmt("all", report))
    for tabs in sorted(report.per_tab):
        rows.append(fmt(f"{tabs}-tab", report.per_tab[tabs]))
    widths = [max(len(row[i]) for row in rows) for i in range(len(headers))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(row, widths)) for row in rows]
    if report.skipped_classes:
        lines.append(f"(mAP skipped all-negative classes: {report.skipped_classes})")
    return "\n".join(lines)
