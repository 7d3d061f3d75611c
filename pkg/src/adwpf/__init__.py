"""Multi-tab webpage fingerprinting on packet-direction traces.

The pipeline: a 1D residual CNN turns a +-1 direction trace into a short
feature map and a set of attention maps; the attention maps drive crop/mask
augmentation during training; a Transformer encoder contextualizes the
features; a residual-attention head scores every webpage class independently
(multi-label). Evaluation is threshold-free (mAP, Recall@k, AP@k).
"""

from adwpf.core_types import (
    AugmentConfig,
    Dataset,
    DirectionTrace,
    ModelConfig,
    Sample,
    decode_labels,
    encode_labels,
    pad_or_truncate,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig",
    "Dataset",
    "DirectionTrace",
    "ModelConfig",
    "Sample",
    "decode_labels",
    "encode_labels",
    "pad_or_truncate",
    "__version__",
]
