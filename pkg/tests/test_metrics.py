"""Ranking-metric unit tests against an exact Fraction-based oracle."""

from fractions import Fraction

import numpy as np
import pytest

from adwpf.metrics import (
    ap_at_k,
    build_report,
    mean_average_precision,
    recall_at_k,
    render_report,
)


def oracle_ranking(scores):
    # descending score, ties by ascending index
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def oracle_recall(labels, scores, k):
    top = oracle_ranking(scores)[:k]
    return Fraction(sum(int(labels[i]) for i in top), sum(int(v) for v in labels))


def oracle_ap(labels, scores, k):
    depth = min(k, len(labels))
    hits = 0
    total = Fraction(0)
    for rank, i in enumerate(oracle_ranking(scores)[:depth], start=1):
        if labels[i]:
            hits += 1
            total += Fraction(hits, rank)
    return total / min(sum(int(v) for v in labels), k)


def oracle_map(label_matrix, score_matrix):
    aps = []
    for class_id in range(len(label_matrix[0])):
        column = [row[class_id] for row in score_matrix]
        order = sorted(range(len(column)), key=lambda i: (-column[i], i))
        hits = 0
        total = Fraction(0)
        for rank, i in enumerate(order, start=1):
            if label_matrix[i][class_id]:
                hits += 1
                total += Fraction(hits, rank)
        if hits:
            aps.append(total / hits)
    return sum(aps) / len(aps)


def random_instance(rng, tie_prone=False):
    n = int(rng.integers(1, 9))
    width = int(rng.integers(2, 6))
    labels = np.zeros((n, width), dtype=np.uint8)
    for row in labels:
        row[rng.choice(width, size=int(rng.integers(1, width + 1)), replace=False)] = 1
    if tie_prone:
        scores = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=(n, width))
    else:
        scores = rng.random((n, width))
    return labels, scores


class TestRecallAtK:
    def test_all_found(self):
        assert recall_at_k(np.array([1, 0, 1]), np.array([0.9, 0.1, 0.8]), 2) == 1.0

    def test_half_found(self):
        assert recall_at_k(np.array([1, 0, 1]), np.array([0.9, 0.8, 0.1]), 2) == 0.5

    def test_k_beyond_width(self):
        assert recall_at_k(np.array([1, 1, 0]), np.array([0.1, 0.2, 0.9]), 10) == 1.0

    def test_rejects_no_positives(self):
        with pytest.raises(ValueError):
            recall_at_k(np.array([0, 0]), np.array([0.1, 0.2]), 1)

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            recall_at_k(np.array([1, 0]), np.array([0.1, 0.2]), 0)


class TestApAtK:
    def test_worked_example(self):
        # ranked [relevant, non-relevant, relevant], two positives, k=3
        labels = np.array([1, 0, 1])
        scores = np.array([0.9, 0.5, 0.1])
        assert ap_at_k(labels, scores, 3) == pytest.approx(5 / 6, abs=1e-15)

    def test_perfect_ranking(self):
        assert ap_at_k(np.array([1, 1, 0]), np.array([0.9, 0.8, 0.1]), 2) == 1.0

    def test_k_smaller_than_positives(self):
        # denominator is min(|positives|, k)
        labels = np.array([1, 1, 1, 0])
        scores = np.array([0.9, 0.8, 0.7, 0.1])
        assert ap_at_k(labels, scores, 2) == 1.0

    def test_k_beyond_width_caps_depth(self):
        labels = np.array([0, 1])
        scores = np.array([0.9, 0.1])
        # depth capped at 2 ranks; single positive at rank 2
        assert ap_at_k(labels, scores, 5) == pytest.approx(0.5)

    def test_tie_broken_by_index(self):
        labels = np.array([0, 1])
        scores = np.array([0.5, 0.5])
        # class 0 wins the tie, positive lands at rank 2
        assert ap_at_k(labels, scores, 2) == pytest.approx(0.5)


class TestMeanAveragePrecision:
    def test_perfect(self):
        labels = np.array([[1, 0], [0, 1]])
        scores = np.array([[0.9, 0.1], [0.1, 0.9]])
        value, skipped = mean_average_precision(labels, scores)
        assert value == 1.0 and skipped == []

    def test_skips_all_negative_class(self):
        labels = np.array([[1, 0], [1, 0]])
        scores = np.array([[0.9, 0.8], [0.7, 0.6]])
        with pytest.warns(UserWarning, match="skipped"):
            value, skipped = mean_average_precision(labels, scores)
        assert skipped == [1]
        assert value == 1.0

    def test_raises_when_all_classes_empty(self):
        labels = np.zeros((3, 2), dtype=np.uint8)
        scores = np.random.default_rng(0).random((3, 2))
        with pytest.raises(ValueError, match="all-negative"):
            with pytest.warns(UserWarning):
                mean_average_precision(labels, scores)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mean_average_precision(np.ones((2, 3)), np.ones((3, 2)))


class TestOracleAgreement:
    @pytest.mark.filterwarnings("ignore:mAP skipped")
    def test_small_instances_match_oracle(self):
        rng = np.random.default_rng(123)
        for trial in range(300):
            labels, scores = random_instance(rng, tie_prone=trial % 2 == 0)
            if not labels.any(axis=0).any():
                continue
            got, _ = mean_average_precision(labels, scores)
            assert got == pytest.approx(float(oracle_map(labels.tolist(), scores.tolist())),
                                        abs=1e-9)
            for y, s in zip(labels, scores):
                for k in (1, 2, 3, 7):
                    assert recall_at_k(y, s, k) == pytest.approx(
                        float(oracle_recall(y.tolist(), s.tolist(), k)), abs=1e-9)
                    assert ap_at_k(y, s, k) == pytest.approx(
                        float(oracle_ap(y.tolist(), s.tolist(), k)), abs=1e-9)


class TestRankInvariance:
    def test_monotone_transform_preserves_metrics(self):
        rng = np.random.default_rng(7)
        labels, scores = random_instance(rng)
        squashed = 1 / (1 + np.exp(-(5 * scores - 2)))  # strictly increasing
        for y, s, s2 in zip(labels, scores, squashed):
            assert recall_at_k(y, s, 3) == recall_at_k(y, s2, 3)
            assert ap_at_k(y, s, 3) == ap_at_k(y, s2, 3)
        assert mean_average_precision(labels, scores)[0] == pytest.approx(
            mean_average_precision(labels, squashed)[0], abs=1e-12)


class TestReport:
    def test_build_report_averages_samples(self):
        labels = np.array([[1, 0, 0], [0, 1, 0]])
        scores = np.array([[0.9, 0.2, 0.1], [0.8, 0.7, 0.1]])
        with pytest.warns(UserWarning):
            report = build_report(labels, scores, recall_ks=(1,), ap_ks=(1,))
        # sample 1 ranks its positive first, sample 2 second
        assert report.recall_at[1] == pytest.approx(0.5)
        assert report.sample_count == 2
        assert report.skipped_classes == [2]

    def test_per_tab_subreports(self):
        labels = np.array([[1, 0], [0, 1], [1, 1]])
        scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.7]])
        report = build_report(labels, scores, tab_counts=np.array([1, 1, 2]))
        assert set(report.per_tab) == {1, 2}
        assert report.per_tab[1].sample_count == 2
        assert report.per_tab[2].recall_at[5] == 1.0
        # nested reports never recurse further
        assert report.per_tab[1].per_tab == {}

    def test_json_round_trip(self):
        import json
        labels = np.array([[1, 0], [0, 1]])
        scores = np.array([[0.9, 0.1], [0.2, 0.8]])
        report = build_report(labels, scores, tab_counts=np.array([1, 1]))
        doc = json.loads(report.to_json())
        assert doc["map"] == report.map
        assert doc["per_tab"]["1"]["sample_count"] == 2

    def test_render_contains_rows(self):
        labels = np.array([[1, 0], [0, 1]])
        scores = np.array([[0.9, 0.1], [0.2, 0.8]])
        text = render_report(build_report(labels, scores, tab_counts=np.array([1, 2])))
        assert "all" in text and "1-tab" in text and "2-tab" in text
        assert "mAP" in text and "R@5" in text
