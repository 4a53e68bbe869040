"""Self-supervised contrastive pre-training and frozen feature extraction."""

from .config import MINI, PAPER, SSLConfig, preset
from .losses import anneal_tau, contrastive_loss, diversity_loss, total_loss
from .model import QuantizerOutput, SSLParams, feature_encoder_forward, init_ssl_params, mask_time_steps, quantize
from .train import SSLFeaturizer, extract_features, load_ssl_checkpoint, save_ssl_checkpoint, ssl_pretrain

__all__ = [
    "MINI",
    "PAPER",
    "QuantizerOutput",
    "SSLConfig",
    "SSLFeaturizer",
    "SSLParams",
    "anneal_tau",
    "contrastive_loss",
    "diversity_loss",
    "extract_features",
    "feature_encoder_forward",
    "init_ssl_params",
    "load_ssl_checkpoint",
    "mask_time_steps",
    "preset",
    "quantize",
    "save_ssl_checkpoint",
    "ssl_pretrain",
    "total_loss",
]
