"""Compact convolutional classifier with verifiable gradients."""

from .model import (
    ModelConfig,
    ModelError,
    TrainedModel,
    load_model,
    predict,
    save_model,
)
from .train import TrainConfig, TrainingError, lr_at, train_arrays, train_manifest, write_history_csv
from .gradcheck import gradient_check

__all__ = [
    "ModelConfig",
    "ModelError",
    "TrainedModel",
    "TrainConfig",
    "TrainingError",
    "gradient_check",
    "load_model",
    "lr_at",
    "predict",
    "save_model",
    "train_arrays",
    "train_manifest",
    "write_history_csv",
]
