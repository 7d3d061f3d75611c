"""Acceptance gate: ten end-to-end checks over the assembled package.

Each test prints a single `criterion NN PASS/FAIL` line straight to the
terminal (bypassing capture) so a plain pytest run yields a scannable
scorecard. The desk-scale benchmark (criteria 7-10) trains real models and
takes roughly half an hour on one CPU core; everything else is seconds.
"""

import time
from contextlib import contextmanager
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import pytest
import torch

from adwpf.augment import (
    attention_crop,
    attention_mask,
    crop_indicator,
    mask_indicator,
    normalize_minmax,
    upsample_linear,
)
from adwpf.core_types import AugmentConfig, ModelConfig
from adwpf.csra import CsraHead, head_logits
from adwpf.metrics import ap_at_k, build_report, mean_average_precision, recall_at_k
from adwpf.model import AdwpfModel
from adwpf.synth_gen import GeneratorConfig, generate_dataset
from adwpf.trace_io import SplitSpec, split_dataset
from adwpf.training import TrainConfig, bce_multilabel, dataset_tensors, evaluate, train

# ---------------------------------------------------------------- benchmark

BENCH_CLASSES = 20          # 2 sites x 10 subpages
BENCH_SAMPLES = 2000
BENCH_DATA_SEED = 7
BENCH_GEN = GeneratorConfig(
    trace_length=2000,
    bursts_per_page=(16, 28),
    request_length_range=(1, 8),
    response_length_range=(4, 44),
    shared_prefix_bursts=4,
    site_size=10,
    jitter=0.2,
)
# reduced model; the last pool stage is relaxed so 2000 cells still yield 8
# encoder positions instead of collapsing to 3
BENCH_MODEL = ModelConfig(
    class_count=BENCH_CLASSES,
    trace_length=2000,
    filters=(16, 32, 64, 128),
    encoder_layers=2,
    heads=4,
    pool_kernels=(9, 9, 9, 5),
    pool_strides=(5, 5, 5, 2),
)
BENCH_AUG = AugmentConfig(crop_dilation=200)
BENCH_EPOCHS = 15
BENCH_BATCH = 64
BENCH_LR = 1e-3
BENCH_SEEDS = (0, 1, 2)

VARIANTS = {
    "none": dict(use_crop=False, use_mask=False, use_residual_attention=False),
    "ac+am": dict(use_crop=True, use_mask=True, use_residual_attention=False),
    "ac+am+ratt": dict(use_crop=True, use_mask=True, use_residual_attention=True),
}


@dataclass
class BenchRun:
    report: object
    history: object
    seconds: float


class Bench:
    """Shared benchmark state with lazily trained, cached runs."""

    def __init__(self):
        t0 = time.perf_counter()
        dataset = generate_dataset(
            BENCH_CLASSES, BENCH_SAMPLES, seed=BENCH_DATA_SEED, cfg=BENCH_GEN
        )
        self.train_ds, self.val_ds, self.test_ds = split_dataset(
            dataset, SplitSpec(seed=0, ratios=(0.7, 0.1, 0.2))
        )
        self.gen_seconds = time.perf_counter() - t0
        _, y_test, tabs_test = dataset_tensors(self.test_ds)
        random_scores = np.random.default_rng(0).random(y_test.shape)
        self.random_map = build_report(y_test.numpy(), random_scores, tabs_test).map
        self._runs: dict[tuple[str, int], BenchRun] = {}

    def fresh_run(self, variant: str, seed: int) -> BenchRun:
        cfg = TrainConfig(
            model=BENCH_MODEL,
            augment=BENCH_AUG,
            epochs=BENCH_EPOCHS,
            batch_size=BENCH_BATCH,
            learning_rate=BENCH_LR,
            seed=seed,
            **VARIANTS[variant],
        )
        t0 = time.perf_counter()
        checkpoint, history = train(cfg, self.train_ds, self.val_ds)
        report = evaluate(checkpoint, self.test_ds)
        return BenchRun(report=report, history=history,
                        seconds=time.perf_counter() - t0)

    def run(self, variant: str, seed: int) -> BenchRun:
        key = (variant, seed)
        if key not in self._runs:
            self._runs[key] = self.fresh_run(variant, seed)
        return self._runs[key]


@pytest.fixture(scope="session")
def bench():
    return Bench()


@pytest.fixture
def announce(capsys):
    @contextmanager
    def _announce(num, description):
        try:
            yield
        except BaseException:
            with capsys.disabled():
                print(f"criterion {num:02d} FAIL: {description}", flush=True)
            raise
        with capsys.disabled():
            print(f"criterion {num:02d} PASS: {description}", flush=True)

    return _announce


# ------------------------------------------------------------------ oracles

def oracle_ranking(scores):
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


# ------------------------------------------------------------------- 1 & 2

@pytest.mark.filterwarnings("ignore:mAP skipped")
def test_criterion_01_metric_oracle_equivalence(announce):
    with announce(1, "ranking metrics match the exact-arithmetic oracle on "
                     "1000 random instances"):
        started = time.perf_counter()
        rng = np.random.default_rng(20260816)
        checked = 0
        while checked < 1000:
            n = int(rng.integers(1, 9))
            width = int(rng.integers(2, 6))
            labels = np.zeros((n, width), dtype=np.uint8)
            for row in labels:
                row[rng.choice(width, size=int(rng.integers(1, width + 1)),
                               replace=False)] = 1
            if checked % 2:
                scores = rng.choice([0.0, 0.25, 0.5, 0.75, 1.0], size=(n, width))
            else:
                scores = rng.random((n, width))
            if not labels.any(axis=0).any():
                continue  # no class has a positive; mAP undefined
            got, _ = mean_average_precision(labels, scores)
            want = float(oracle_map(labels.tolist(), scores.tolist()))
            assert abs(got - want) < 1e-9
            for y, s in zip(labels, scores):
                for k in (1, 2, 3, width, width + 2):
                    assert abs(recall_at_k(y, s, k)
                               - float(oracle_recall(y.tolist(), s.tolist(), k))) < 1e-9
                    assert abs(ap_at_k(y, s, k)
                               - float(oracle_ap(y.tolist(), s.tolist(), k))) < 1e-9
            checked += 1
        assert time.perf_counter() - started < 60


def test_criterion_02_hand_worked_ap(announce):
    with announce(2, "AP@3 of the ranking [rel, nonrel, rel] with two "
                     "positives equals 5/6"):
        labels = [1, 0, 1]
        scores = [0.9, 0.5, 0.3]
        assert oracle_ap(labels, scores, 3) == Fraction(5, 6)
        got = ap_at_k(np.array(labels), np.array(scores), 3)
        assert got == pytest.approx(5 / 6, abs=1e-12)


# ----------------------------------------------------------------------- 3

def test_criterion_03_shape_contract(announce):
    with announce(3, "default config maps (B, 10000) traces to a "
                     "(B, 16, 640) feature map"):
        cfg = ModelConfig(class_count=50)
        model = AdwpfModel(cfg).eval()
        x = torch.from_numpy(
            np.random.default_rng(0).choice([-1.0, 1.0], size=(2, 10000))
        ).float()
        with torch.no_grad():
            features, _ = model.backbone(x)
            encoded = model.encoder(features)
        assert encoded.shape == (2, 16, 640)


# ----------------------------------------------------------------------- 4

def unimodal_map(rng):
    m = int(rng.integers(6, 31))
    center = float(rng.uniform(1, m - 2))
    width = float(rng.uniform(1.0, m / 2))
    idx = np.arange(m, dtype=np.float64)
    return torch.from_numpy(np.maximum(0.0, 1.0 - np.abs(idx - center) / width))


def test_criterion_04_augmentation_algebra(announce):
    with announce(4, "indicator complements, threshold monotonicity, and "
                     "crop/mask product identities hold on 1000 draws"):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            length = int(rng.integers(50, 400))
            raw = torch.from_numpy(rng.random(int(rng.integers(5, 40))))
            a_star = normalize_minmax(upsample_linear(raw, length))
            phi = float(rng.uniform(0.05, 0.95))
            s_c = crop_indicator(a_star, phi)
            s_m = mask_indicator(a_star, phi)
            assert ((s_c.int() + s_m.int()) == 1).all()

            lo, hi = sorted(rng.uniform(0.05, 0.95, size=2))
            assert (crop_indicator(a_star, lo) >= crop_indicator(a_star, hi)).all()

            x = torch.from_numpy(rng.choice([-1.0, 1.0], size=length))
            masked, _ = attention_mask(x, s_m)
            assert torch.equal(masked, x * s_m)

            bump = normalize_minmax(upsample_linear(unimodal_map(rng), length))
            s_bump = crop_indicator(bump, phi)
            hot = torch.nonzero(s_bump).flatten()
            assert hot.numel() > 0
            assert (torch.diff(hot) == 1).all()  # contiguous by construction
            cropped, degenerate = attention_crop(x, s_bump, 0)
            assert not degenerate
            assert torch.equal(cropped, x * s_bump)


# ----------------------------------------------------------------------- 5

def test_criterion_05_residual_head_identities(announce):
    with announce(5, "lambda=0 head equals the GAP linear classifier; the "
                     "scalar worked example gives 2.8285"):
        torch.manual_seed(5)
        head = CsraHead(7, 16, residual_scale=0.0)
        z = torch.randn(5, 12, 16)
        gap_logits = z.mean(dim=1) @ head.weight.T
        assert torch.allclose(head(z), gap_logits, atol=1e-6)

        o = torch.tensor([[1.0], [3.0]])
        m = torch.tensor([[1.0]])
        logit = float(head_logits(o, m, 0.3))
        assert abs(logit - 2.8285) < 5e-4


# ----------------------------------------------------------------------- 6

GRAD_MODEL = ModelConfig(
    class_count=3,
    trace_length=100,
    filters=(4, 8, 8, 8),
    pool_kernels=(2, 2, 2, 2),
    pool_strides=(2, 2, 2, 2),
    attn_channels=2,
    encoder_layers=1,
    heads=2,
)


def test_criterion_06_gradient_check(announce):
    with announce(6, "analytic gradients match central finite differences "
                     "(rel < 1e-4, 20 coordinates per parameter)"):
        started = time.perf_counter()
        torch.manual_seed(6)
        model = AdwpfModel(GRAD_MODEL).double().train()
        rng = np.random.default_rng(6)
        x = torch.from_numpy(rng.choice([-1.0, 1.0], size=(4, 100)))
        y = torch.from_numpy(rng.integers(0, 2, size=(4, 3)).astype(np.float64))

        def loss_value():
            logits, maps = model(x)
            # maps.mean() exercises the attention branch, which the training
            # loss only ever reaches through detached augmented inputs
            return bce_multilabel(logits, y) + maps.mean()

        loss = loss_value()
        model.zero_grad()
        loss.backward()

        h = 1e-5
        for name, param in model.named_parameters():
            assert param.grad is not None, name
            flat = param.data.view(-1)
            grads = param.grad.view(-1)
            coords = rng.choice(flat.numel(), size=min(20, flat.numel()),
                                replace=False)
            for c in coords:
                original = flat[c].item()
                flat[c] = original + h
                upper = loss_value().item()
                flat[c] = original - h
                lower = loss_value().item()
                flat[c] = original
                fd = (upper - lower) / (2 * h)
                analytic = grads[c].item()
                scale = max(abs(analytic), abs(fd))
                if scale < 1e-10:
                    continue
                rel = abs(analytic - fd) / scale
                assert rel < 1e-4, f"{name}[{c}]: analytic={analytic} fd={fd}"
        assert time.perf_counter() - started < 300


# ------------------------------------------------------------------ 7 - 10

@pytest.mark.filterwarnings("ignore:mAP skipped")
def test_criterion_07_desk_scale_benchmark(announce, bench):
    with announce(7, "benchmark test mAP >= 0.50 and >= 3x the random "
                     "scorer, within the time budget"):
        run = bench.run("ac+am+ratt", 0)
        assert run.report.map >= 0.50
        assert run.report.map >= 3 * bench.random_map
        assert bench.gen_seconds + run.seconds < 1200


@pytest.mark.filterwarnings("ignore:mAP skipped")
def test_criterion_08_ablation_directionality(announce, bench):
    with announce(8, "seed-mean mAP ordering: crop+mask >= none and "
                     "crop+mask+ratt >= crop+mask"):
        means = {
            variant: float(np.mean([bench.run(variant, s).report.map
                                    for s in BENCH_SEEDS]))
            for variant in VARIANTS
        }
        assert means["ac+am"] >= means["none"]
        assert means["ac+am+ratt"] >= means["ac+am"]


@pytest.mark.filterwarnings("ignore:mAP skipped")
def test_criterion_09_per_tab_degradation(announce, bench):
    with announce(9, "Recall@5 on 1-tab samples exceeds Recall@5 on "
                     "3-tab samples"):
        report = bench.run("ac+am+ratt", 0).report
        assert report.per_tab[1].recall_at[5] > report.per_tab[3].recall_at[5]


@pytest.mark.filterwarnings("ignore:mAP skipped")
def test_criterion_10_determinism(announce, bench):
    with announce(10, "identical seeds reproduce epoch-1 loss and the "
                      "final report exactly"):
        first = bench.run("ac+am+ratt", 0)
        second = bench.fresh_run("ac+am+ratt", 0)
        delta = abs(first.history.epochs[0].train_loss
                    - second.history.epochs[0].train_loss)
        assert delta <= 1e-6
        assert first.report.to_json() == second.report.to_json()
