"""Sparse-gated mixture-of-experts voice conversion engine.

A from-scratch voice-conversion stack: a minimal reverse-mode tensor library,
a gated-CNN VAE with an auxiliary speaker classifier, per-layer sparse channel
gating driven by two embedding networks, and an inference engine that skips
convolution work on zero-gated channels with exact FLOP accounting.
"""

from .autodiff import Tensor
from .config import RunConfig, load_config, parse_config_text
from .errors import MoevcError
from .features import FeatureSeq, read_feature_file, write_feature_file
from .metrics import mcd
from .moe import MoeModel, moe_forward, moe_total_loss
from .sparse import count_flops_dense, count_flops_sparse, plan_gates, sparse_forward

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "RunConfig",
    "load_config",
    "parse_config_text",
    "MoevcError",
    "FeatureSeq",
    "read_feature_file",
    "write_feature_file",
    "mcd",
    "MoeModel",
    "moe_forward",
    "moe_total_loss",
    "count_flops_dense",
    "count_flops_sparse",
    "plan_gates",
    "sparse_forward",
    "__version__",
]
