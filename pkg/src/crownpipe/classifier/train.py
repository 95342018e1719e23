"""SGD training with a stepped learning-rate schedule.

Momentum SGD (0.9) minimizes mean softmax cross-entropy. The learning rate
starts at the base value and is multiplied by gamma whenever training
crosses a step boundary; the step length is a percentage of the total epoch
count, rounded up. The run is deterministic for a fixed seed: shuffling,
batching and gradient accumulation order are all pinned.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from ..dataset import ManifestRow, bilinear_resize, load_manifest_images, read_manifest
from . import layers as L
from .model import ModelConfig, TrainedModel, backward, forward, init_params

log = logging.getLogger(__name__)


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    base_lr: float = 0.01
    momentum: float = 0.9
    step_size_pct: int = 33
    gamma: float = 0.1
    batch_size: int = 32
    seed: int = 42

    def __post_init__(self):
        if self.epochs <= 0:
            raise TrainingError("epochs must be positive")
        if not 0 < self.gamma <= 1:
            raise TrainingError("gamma must be in (0, 1]")
        if not 0 < self.step_size_pct <= 100:
            raise TrainingError("step size must be in (0, 100] percent")
        if self.batch_size <= 0:
            raise TrainingError("batch size must be positive")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate in effect during the given (0-based) epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise TrainingError(f"epoch {epoch} outside [0, {cfg.epochs})")
    step = math.ceil(cfg.step_size_pct / 100.0 * cfg.epochs)
    return cfg.base_lr * cfg.gamma ** (epoch // step)


def train_arrays(x_train: np.ndarray, y_train: np.ndarray,
                 x_val: np.ndarray, y_val: np.ndarray,
                 classes: list[int], model_cfg: ModelConfig,
                 train_cfg: TrainConfig, dtype=np.float32) -> TrainedModel:
    """Train on uint8 (N, H, W, 3) image arrays with class-index labels."""
    present = set(np.unique(y_train).tolist())
    missing = [classes[i] for i in range(len(classes)) if i not in present]
    if missing:
        raise TrainingError(f"classes missing from the train split: {missing}")

    channel_mean = (x_train.astype(np.float64) / 255.0).mean(axis=(0, 1, 2))
    model = TrainedModel(config=model_cfg,
                         params=init_params(model_cfg, seed=train_cfg.seed, dtype=dtype),
                         classes=list(classes), channel_mean=channel_mean)
    xt = model.preprocess(x_train)
    xv = model.preprocess(x_val) if len(x_val) else None

    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    rng = np.random.default_rng(train_cfg.seed)
    n = len(xt)
    for epoch in range(train_cfg.epochs):
        lr = lr_at(epoch, train_cfg)
        order = rng.permutation(n)
        losses = []
        for bi, start in enumerate(range(0, n, train_cfg.batch_size)):
            idx = order[start:start + train_cfg.batch_size]
            logits, caches = forward(model_cfg, model.params, xt[idx])
            loss, dlogits = L.softmax_cross_entropy(logits, y_train[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi}")
            losses.append(loss)
            grads = backward(model_cfg, dlogits.astype(dtype), caches)
            for name, g in grads.items():
                v = velocity[name]
                v *= dtype(train_cfg.momentum)
                v -= dtype(lr) * g
                model.params[name] += v

        entry = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses))}
        if xv is not None:
            vloss, vacc = _evaluate(model_cfg, model.params, xv, y_val,
                                    train_cfg.batch_size)
            entry["val_loss"] = vloss
            entry["val_accuracy"] = vacc
        else:
            entry["val_loss"] = float("nan")
            entry["val_accuracy"] = float("nan")
        model.history.append(entry)
        log.info("epoch %d lr %.5f train_loss %.4f val_loss %.4f val_acc %.4f",
                 epoch, lr, entry["train_loss"], entry["val_loss"], entry["val_accuracy"])
    return model


def _evaluate(cfg, params, x, y, batch_size):
    losses, correct = [], 0
    for start in range(0, len(x), batch_size):
        logits, _ = forward(cfg, params, x[start:start + batch_size])
        loss, _ = L.softmax_cross_entropy(logits, y[start:start + batch_size])
        losses.append(loss * len(logits))
        correct += int((logits.argmax(axis=1) == y[start:start + batch_size]).sum())
    return float(np.sum(losses) / len(x)), correct / len(x)


def prepare_images(images: np.ndarray, side: int) -> np.ndarray:
    """Resize a uint8 (N, H, W, 3) batch to the model input side."""
    if images.shape[1] == side and images.shape[2] == side:
        return images
    return np.stack([bilinear_resize(img, side, side) for img in images])


def train_manifest(manifest_path, model_cfg: ModelConfig, train_cfg: TrainConfig,
                   dtype=np.float32) -> TrainedModel:
    """Train from a crop manifest, using its train and val splits."""
    rows = read_manifest(manifest_path)
    classes = sorted({r.class_id for r in rows})
    if model_cfg.num_classes != len(classes):
        model_cfg = ModelConfig(**{**model_cfg.__dict__, "num_classes": len(classes)})
    index = {c: i for i, c in enumerate(classes)}

    def load_split(split: str) -> tuple[np.ndarray, np.ndarray]:
        subset = [r for r in rows if r.split == split]
        if not subset:
            return (np.zeros((0, model_cfg.input_side, model_cfg.input_side, 3),
                             dtype=np.uint8), np.zeros(0, dtype=np.int64))
        images = load_manifest_images(manifest_path, subset)
        images = prepare_images(images, model_cfg.input_side)
        labels = np.array([index[r.class_id] for r in subset], dtype=np.int64)
        return images, labels

    x_train, y_train = load_split("train")
    if not len(x_train):
        raise TrainingError("manifest has no train rows")
    x_val, y_val = load_split("val")
    return train_arrays(x_train, y_train, x_val, y_val, classes,
                        model_cfg, train_cfg, dtype=dtype)


def write_history_csv(path, model: TrainedModel) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "lr", "train_loss", "val_loss", "val_accuracy"])
        for row in model.history:
            writer.writerow([row["epoch"], repr(row["lr"]), repr(row["train_loss"]),
                             repr(row["val_loss"]), repr(row["val_accuracy"])])
