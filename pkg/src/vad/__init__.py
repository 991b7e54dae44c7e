"""Encoder-less auto-encoding variational Bayes for incomplete data."""

from .data import Dataset, SyntheticConfig, apply_mask, gen_synthetic, sample_mcar
from .engine import TrainConfig, eval_mse, impute, infer, train
from .estimators import VariationalAutoDecoder, VariationalAutoEncoder

__all__ = [
    "Dataset",
    "SyntheticConfig",
    "TrainConfig",
    "VariationalAutoDecoder",
    "VariationalAutoEncoder",
    "apply_mask",
    "eval_mse",
    "gen_synthetic",
    "impute",
    "infer",
    "sample_mcar",
    "train",
]

__version__ = "0.1.0"
