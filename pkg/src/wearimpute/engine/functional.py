"""Fused differentiable kernels built on :class:`Tensor`.

GELU uses the exact erf form, x * Phi(x), everywhere in the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .tensor import Tensor, as_tensor

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    y = x.data - x.data.max(axis=axis, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)

    def back(g):
        gy = g * y
        gy -= y * gy.sum(axis=axis, keepdims=True)
        x._accumulate(gy)

    return Tensor._from_op(y, (x,), back, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def back(g):
        x._accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return Tensor._from_op(y, (x,), back, "log_softmax")


def gelu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        x._accumulate(g * (cdf + x.data * pdf))

    return Tensor._from_op(x.data * cdf, (x,), back, "gelu")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    on = x.data > 0

    def back(g):
        x._accumulate(g * on)

    return Tensor._from_op(np.where(on, x.data, 0.0), (x,), back, "relu")


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: zero with probability ``p`` and rescale survivors."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def back(g):
        x._accumulate(g * keep)

    return Tensor._from_op(x.data * keep, (x,), back, "dropout")


def embedding(weight: Tensor, indices) -> Tensor:
    """Row lookup ``weight[indices]``; repeated indices accumulate gradient."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= weight.shape[0]):
        raise IndexError("embedding index out of range")
    return weight[idx]


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis then apply the affine pair."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def back(g):
        if gamma.requires_grad:
            gamma._accumulate(g * xhat)
        if beta.requires_grad:
            beta._accumulate(g)
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = inv / n * (
                n * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
            x._accumulate(dx)

    return Tensor._from_op(xhat * gamma.data + beta.data, (x, gamma, beta), back, "layer_norm")


@dataclass
class RunningStats:
    """Running per-feature mean/variance tracked by batch normalization."""

    mean: np.ndarray
    var: np.ndarray
    momentum: float = 0.1
    count: int = 0

    @classmethod
    def zeros(cls, features: int, momentum: float = 0.1) -> "RunningStats":
        return cls(np.zeros(features), np.ones(features), momentum)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: RunningStats,
    training: bool,
    eps: float = 1e-5,
) -> Tensor:
    """Per-feature normalization over every axis except the last.

    Training mode normalizes with the batch statistics and folds them into
    ``running`` (unbiased variance, exponential average); eval mode uses the
    running statistics.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = tuple(range(x.ndim - 1))
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if not training:
        inv = 1.0 / np.sqrt(running.var + eps)
        xhat = (x.data - running.mean) * inv

        def back_eval(g):
            if gamma.requires_grad:
                gamma._accumulate(g * xhat)
            if beta.requires_grad:
                beta._accumulate(g)
            if x.requires_grad:
                x._accumulate(g * gamma.data * inv)

        return Tensor._from_op(xhat * gamma.data + beta.data, (x, gamma, beta), back_eval, "batch_norm")

    if n < 2:
        raise ValueError("batch normalization in training mode needs at least 2 samples")
    mu = x.data.mean(axis=axes)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    m = running.momentum
    running.mean = (1.0 - m) * running.mean + m * mu
    running.var = (1.0 - m) * running.var + m * var * n / (n - 1)
    running.count += 1

    def back(g):
        if gamma.requires_grad:
            gamma._accumulate(g * xhat)
        if beta.requires_grad:
            beta._accumulate(g)
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = inv / n * (
                n * dxhat
                - dxhat.sum(axis=axes)
                - xhat * (dxhat * xhat).sum(axis=axes)
            )
            x._accumulate(dx)

    return Tensor._from_op(xhat * gamma.data + beta.data, (x, gamma, beta), back, "batch_norm")


def masked_mse(pred: Tensor, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean squared error over the cells where ``mask`` is true."""
    mask = np.asarray(mask, dtype=np.float64)
    count = mask.sum()
    if count == 0:
        raise ValueError("masked_mse needs at least one masked cell")
    diff = pred - Tensor(np.where(mask > 0, target, 0.0))
    return (diff * diff * mask).sum() * (1.0 / count)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``logits``."""
    labels = np.asarray(labels, dtype=np.intp)
    logp = log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(labels)), labels]
    return -picked.mean()


__all__ = [
    "RunningStats",
    "batch_norm",
    "cross_entropy",
    "dropout",
    "embedding",
    "gelu",
    "layer_norm",
    "log_softmax",
    "masked_mse",
    "relu",
    "softmax",
]
