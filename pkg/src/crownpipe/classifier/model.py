"""The compact convolutional classifier: configuration, network, weights file.

Default topology: three conv(3x3)+ReLU+maxpool(2) blocks with 16/32/64
channels, global average pooling, one hidden fully connected layer and a
softmax output over the tree classes. Small enough to verify its gradients
against finite differences and to train on a desktop CPU.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import layers as L


class ModelError(Exception):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_side: int = 64
    in_channels: int = 3
    conv_channels: tuple[int, ...] = (16, 32, 64)
    kernel: int = 3
    pool: int = 2
    hidden: int = 64
    num_classes: int = 7

    def __post_init__(self):
        if self.input_side <= 0 or self.in_channels <= 0 or self.num_classes <= 0:
            raise ModelError("all model dimensions must be positive")
        if self.kernel % 2 != 1:
            raise ModelError("kernel size must be odd (same padding)")
        if any(c <= 0 for c in self.conv_channels):
            raise ModelError("conv channel counts must be positive")
        if self.hidden < 0:
            raise ModelError("hidden width must be nonnegative (0 = no hidden layer)")
        side = self.input_side
        for _ in self.conv_channels:
            if side % self.pool:
                raise ModelError(
                    f"input side {self.input_side} not divisible by pool {self.pool} "
                    f"across {len(self.conv_channels)} blocks")
            side //= self.pool

    @property
    def feature_dim(self) -> int:
        """Width of the vector feeding the fully connected head."""
        if self.conv_channels:
            return self.conv_channels[-1]
        return self.in_channels * self.input_side * self.input_side


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    """He-normal conv/hidden weights; the output layer starts at zero so an
    untrained model predicts the uniform distribution."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    c_in = cfg.in_channels
    for i, c_out in enumerate(cfg.conv_channels, start=1):
        fan_in = c_in * cfg.kernel * cfg.kernel
        params[f"conv{i}_w"] = (rng.standard_normal((c_out, c_in, cfg.kernel, cfg.kernel))
                                * np.sqrt(2.0 / fan_in)).astype(dtype)
        params[f"conv{i}_b"] = np.zeros(c_out, dtype=dtype)
        c_in = c_out
    dim = cfg.feature_dim
    if cfg.hidden:
        params["fc_w"] = (rng.standard_normal((dim, cfg.hidden))
                          * np.sqrt(2.0 / dim)).astype(dtype)
        params["fc_b"] = np.zeros(cfg.hidden, dtype=dtype)
        dim = cfg.hidden
    params["out_w"] = np.zeros((dim, cfg.num_classes), dtype=dtype)
    params["out_b"] = np.zeros(cfg.num_classes, dtype=dtype)
    return params


def param_names(cfg: ModelConfig) -> list[str]:
    names = []
    for i in range(1, len(cfg.conv_channels) + 1):
        names += [f"conv{i}_w", f"conv{i}_b"]
    if cfg.hidden:
        names += ["fc_w", "fc_b"]
    names += ["out_w", "out_b"]
    return names


def forward(cfg: ModelConfig, params: dict[str, np.ndarray], x: np.ndarray):
    """Logits for a (N, C, H, W) batch, plus the caches for backward."""
    caches = []
    out = x
    for i in range(1, len(cfg.conv_channels) + 1):
        out, c_conv = L.conv_forward(out, params[f"conv{i}_w"], params[f"conv{i}_b"])
        out, c_relu = L.relu_forward(out)
        out, c_pool = L.maxpool_forward(out, cfg.pool)
        caches.append(("block", c_conv, c_relu, c_pool))
    if cfg.conv_channels:
        out, c_gap = L.global_avgpool_forward(out)
        caches.append(("gap", c_gap))
    else:
        caches.append(("flatten", out.shape))
        out = out.reshape(out.shape[0], -1)
    if cfg.hidden:
        out, c_fc = L.fc_forward(out, params["fc_w"], params["fc_b"])
        out, c_hrelu = L.relu_forward(out)
        caches.append(("hidden", c_fc, c_hrelu))
    logits, c_out = L.fc_forward(out, params["out_w"], params["out_b"])
    caches.append(("out", c_out))
    return logits, caches


def backward(cfg: ModelConfig, dlogits: np.ndarray, caches) -> dict[str, np.ndarray]:
    """Gradients for every parameter given d(loss)/d(logits)."""
    grads: dict[str, np.ndarray] = {}
    caches = list(caches)

    kind, c_out = caches.pop()
    dout, grads["out_w"], grads["out_b"] = L.fc_backward(dlogits, c_out)

    if cfg.hidden:
        _, c_fc, c_hrelu = caches.pop()
        dout = L.relu_backward(dout, c_hrelu)
        dout, grads["fc_w"], grads["fc_b"] = L.fc_backward(dout, c_fc)

    head = caches.pop()
    if head[0] == "gap":
        dout = L.global_avgpool_backward(dout, head[1])
    else:
        dout = dout.reshape(head[1])

    for i in range(len(cfg.conv_channels), 0, -1):
        _, c_conv, c_relu, c_pool = caches.pop()
        dout = L.maxpool_backward(dout, c_pool)
        dout = L.relu_backward(dout, c_relu)
        dout, grads[f"conv{i}_w"], grads[f"conv{i}_b"] = L.conv_backward(dout, c_conv)
    return grads


@dataclass
class TrainedModel:
    """Weights plus everything needed to reproduce predictions."""

    config: ModelConfig
    params: dict[str, np.ndarray]
    classes: list[int]
    channel_mean: np.ndarray  # per-channel mean of [0,1]-scaled train pixels
    history: list[dict] = field(default_factory=list)

    def preprocess(self, images: np.ndarray) -> np.ndarray:
        """uint8 (N, H, W, 3) -> normalized float NCHW at the model's dtype."""
        dtype = self.params["out_w"].dtype
        x = images.astype(dtype) / 255.0
        x = x - self.channel_mean.astype(dtype)[None, None, None, :]
        return np.ascontiguousarray(x.transpose(0, 3, 1, 2))

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        """Class probabilities for a uint8 (N, H, W, 3) batch."""
        n, h, w, c = images.shape
        if h != self.config.input_side or w != self.config.input_side or c != 3:
            raise ModelError(
                f"expected {self.config.input_side}x{self.config.input_side}x3 images, "
                f"got {h}x{w}x{c}")
        logits, _ = forward(self.config, self.params, self.preprocess(images))
        return L.softmax(logits)


def predict(model: TrainedModel, image: np.ndarray) -> np.ndarray:
    """Probability vector over the model's classes for one image."""
    return model.predict_proba(image[None])[0]


# ---------------------------------------------------------------------------
# Weights container: magic, version, JSON header, raw little-endian float64

MAGIC = b"CRWN"
FORMAT_VERSION = 1


def save_model(path, model: TrainedModel) -> None:
    header = {
        "config": asdict(model.config),
        "classes": model.classes,
        "channel_mean": [float(v) for v in model.channel_mean],
        "params": [[name, list(model.params[name].shape)]
                   for name in param_names(model.config)],
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for name in param_names(model.config):
            fh.write(model.params[name].astype("<f8").tobytes())


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ModelError(f"{path} is not a model weights file")
        version, blob_len = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise ModelError(f"unsupported weights format version {version}")
        header = json.loads(fh.read(blob_len).decode())
        cfg_dict = dict(header["config"])
        cfg_dict["conv_channels"] = tuple(cfg_dict["conv_channels"])
        cfg = ModelConfig(**cfg_dict)
        params = {}
        for name, shape in header["params"]:
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(count * 8), dtype="<f8").reshape(shape)
            params[name] = data.astype(np.float64)
    return TrainedModel(config=cfg, params=params, classes=list(header["classes"]),
                        channel_mean=np.array(header["channel_mean"]))
