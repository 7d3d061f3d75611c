import numpy as np
import pytest

from adwpf.core_types import Dataset, ModelConfig, Sample, encode_labels, pad_or_truncate
from adwpf.synth_gen import GeneratorConfig


@pytest.fixture
def tiny_model_config() -> ModelConfig:
    # smallest config that still exercises every stage: L=200 -> M=12
    return ModelConfig(
        class_count=6,
        trace_length=200,
        filters=(4, 8, 8, 16),
        pool_kernels=(2, 2, 2, 2),
        pool_strides=(2, 2, 2, 2),
        attn_channels=3,
        encoder_layers=1,
        heads=2,
    )


@pytest.fixture
def tiny_gen_config() -> GeneratorConfig:
    return GeneratorConfig(
        trace_length=500,
        bursts_per_page=(6, 10),
        request_length_range=(1, 4),
        response_length_range=(3, 16),
        shared_prefix_bursts=2,
        site_size=3,
    )


def make_sample(sample_id: str, dirs, labels, class_count: int, length: int) -> Sample:
    return Sample(
        id=sample_id,
        trace=pad_or_truncate(dirs, length),
        labels=encode_labels(labels, class_count),
        tab_count=len(set(labels)),
    )


@pytest.fixture
def small_dataset() -> Dataset:
    rng = np.random.default_rng(42)
    samples = []
    for i in range(12):
        labels = sorted(rng.choice(4, size=int(rng.integers(1, 3)), replace=False).tolist())
        dirs = rng.choice([-1, 1], size=int(rng.integers(20, 50))).tolist()
        samples.append(make_sample(f"s{i:02d}", dirs, labels, 4, 64))
    return Dataset(samples=samples, class_names=[f"page{i}" for i in range(4)])
