"""Weighted focal differentiable MCC loss with a from-scratch autodiff LSTM stack."""

from .losses import LossSpec, diff_f1_loss, diff_mcc_loss, focal, soft_confusion, weighted_ce
from .model import ModelConfig, ModelParams
from .train import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "LossSpec",
    "ModelConfig",
    "ModelParams",
    "TrainConfig",
    "diff_f1_loss",
    "diff_mcc_loss",
    "focal",
    "soft_confusion",
    "weighted_ce",
]
