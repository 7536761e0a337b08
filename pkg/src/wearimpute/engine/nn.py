"""Layer building blocks shared by the imputer and the classifier."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, matmul


class Parameter(Tensor):
    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Container that discovers parameters, buffers and submodules by attribute."""

    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):  # pragma: no cover - abstract
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, value in vars(self).items():
            if isinstance(value, (Module, Parameter, F.RunningStats)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (Module, Parameter)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, F.RunningStats):
                yield f"{full}.mean", value.mean
                yield f"{full}.var", value.var
            elif isinstance(value, Module):
                yield from value.named_buffers(full + ".")

    def _modules(self) -> Iterator["Module"]:
        yield self
        for _, value in self._children():
            if isinstance(value, Module):
                yield from value._modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self._modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = self._buffer_owners()
        expected = set(params) | set(buffers)
        missing = expected - set(state)
        extra = set(state) - expected
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, p in params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {p.shape}")
            p.data = arr.copy()
        for name, (stats, field) in buffers.items():
            setattr(stats, field, np.asarray(state[name], dtype=np.float64).copy())

    def _buffer_owners(self, prefix: str = "") -> dict[str, tuple[F.RunningStats, str]]:
        out = {}
        for name, value in self._children():
            full = f"{prefix}{name}"
            if isinstance(value, F.RunningStats):
                out[f"{full}.mean"] = (value, "mean")
                out[f"{full}.var"] = (value, "var")
            elif isinstance(value, Module):
                out.update(value._buffer_owners(full + "."))
        return out


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """Affine map ``x @ W + b`` applied over the last axis."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, bound, (in_features, out_features)))
        self.bias = Parameter(_uniform(rng, bound, (out_features,))) if bias else None
        self.in_features = in_features
        self.out_features = out_features

    def forward(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, features: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(features))
        self.beta = Parameter(np.zeros(features))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.layer_norm(x, self.gamma, self.beta, self.eps)


class BatchNorm(Module):
    """Batch normalization over all leading axes, features on the last axis."""

    def __init__(self, features: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Parameter(np.ones(features))
        self.beta = Parameter(np.zeros(features))
        self.running = F.RunningStats.zeros(features, momentum)
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(x, self.gamma, self.beta, self.running, self.training, self.eps)


class MultiHeadSelfAttention(Module):
    """Scaled dot-product self-attention split across ``n_heads`` heads.

    Queries, keys and values come from one input through separate projections
    of width ``n_heads * head_dim``; head outputs are concatenated and mapped
    back to ``d_model`` by the output projection. The most recent attention
    weights are kept on ``last_attention`` with shape (..., heads, T, T).
    """

    def __init__(
        self,
        d_model: int,
        n_heads: int,
        rng: np.random.Generator,
        head_dim: int | None = None,
        dropout: float = 0.0,
    ):
        if head_dim is None:
            if d_model % n_heads:
                raise ValueError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
            head_dim = d_model // n_heads
        inner = n_heads * head_dim
        self.n_heads = n_heads
        self.head_dim = head_dim
        self.q = Linear(d_model, inner, rng)
        self.k = Linear(d_model, inner, rng)
        self.v = Linear(d_model, inner, rng)
        self.out = Linear(inner, d_model, rng)
        self.dropout = dropout
        self.rng = rng
        self.last_attention: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        *lead, t, _ = x.shape
        return x.reshape(*lead, t, self.n_heads, self.head_dim).swapaxes(-2, -3)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim < 2:
            raise ValueError("attention input must be (..., T, d_model)")
        if x.shape[-1] != self.q.in_features:
            raise ValueError(f"expected feature width {self.q.in_features}, got {x.shape[-1]}")
        # scaling the queries is cheaper than scaling the T x T score matrix
        q = self._split(self.q(x) * (1.0 / np.sqrt(self.head_dim)))
        k = self._split(self.k(x))
        v = self._split(self.v(x))
        scores = matmul(q, k.swapaxes(-1, -2))
        weights = F.softmax(scores, axis=-1)
        self.last_attention = weights.data
        weights = F.dropout(weights, self.dropout, self.training, self.rng)
        heads = matmul(weights, v)  # (..., H, T, head_dim)
        *lead, _, t, _ = heads.shape
        merged = heads.swapaxes(-2, -3).reshape(*lead, t, self.n_heads * self.head_dim)
        return self.out(merged)
