"""Minimal float64 autodiff engine used to train both transformer models."""

from . import functional
from .checkpoint import ENGINE_VERSION, config_hash, load_checkpoint, save_checkpoint
from .functional import (
    batch_norm,
    cross_entropy,
    dropout,
    embedding,
    gelu,
    layer_norm,
    log_softmax,
    masked_mse,
    softmax,
)
from .gradcheck import check_gradients, numerical_grad, relative_error
from .nn import BatchNorm, LayerNorm, Linear, Module, MultiHeadSelfAttention, Parameter
from .optim import Adam, AdamState, adam_step
from .tensor import (
    GraphNode,
    NonFiniteError,
    Tensor,
    as_tensor,
    checked,
    concat,
    matmul,
    no_grad,
    trace,
    where,
)

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm",
    "ENGINE_VERSION",
    "GraphNode",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadSelfAttention",
    "NonFiniteError",
    "Parameter",
    "Tensor",
    "adam_step",
    "as_tensor",
    "batch_norm",
    "check_gradients",
    "checked",
    "concat",
    "config_hash",
    "cross_entropy",
    "dropout",
    "embedding",
    "functional",
    "gelu",
    "layer_norm",
    "load_checkpoint",
    "log_softmax",
    "masked_mse",
    "matmul",
    "no_grad",
    "numerical_grad",
    "relative_error",
    "save_checkpoint",
    "softmax",
    "trace",
    "where",
]
