"""Finite-difference verification of the network's analytic gradients."""

from __future__ import annotations

import numpy as np

from . import layers as L
from .model import ModelConfig, backward, forward, init_params


def gradient_check(model_cfg: ModelConfig, x: np.ndarray, y: np.ndarray,
                   epsilon: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every parameter of the model at float64 precision, so keep the
    configuration small. ``x`` is an NCHW float batch, ``y`` class indices.
    """
    if not 1e-5 <= epsilon <= 1e-2:
        raise ValueError(f"epsilon {epsilon} outside [1e-5, 1e-2]")
    x = np.asarray(x, dtype=np.float64)
    params = init_params(model_cfg, seed=seed, dtype=np.float64)
    # a zero output layer would hide upstream gradients; perturb it
    rng = np.random.default_rng(seed + 1)
    params["out_w"] = rng.standard_normal(params["out_w"].shape) * 0.1
    params["out_b"] = rng.standard_normal(params["out_b"].shape) * 0.1

    logits, caches = forward(model_cfg, params, x)
    _, dlogits = L.softmax_cross_entropy(logits, y)
    grads = backward(model_cfg, dlogits, caches)

    def loss_at() -> float:
        lg, _ = forward(model_cfg, params, x)
        loss, _ = L.softmax_cross_entropy(lg, y)
        return loss

    worst = 0.0
    for name, p in params.items():
        flat = p.ravel()
        gflat = grads[name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_at()
            flat[i] = orig - epsilon
            down = loss_at()
            flat[i] = orig
            numeric = (up - down) / (2 * epsilon)
            denom = max(abs(numeric), abs(gflat[i]), 1e-8)
            worst = max(worst, abs(numeric - gflat[i]) / denom)
    return worst
