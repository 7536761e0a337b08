"""Patch-based transformer classifier for fixed-length multichannel windows.

    instance-norm -> non-overlapping time patches -> linear embedding
    -> [class token] + positional embedding -> dropout
    -> D pre-norm blocks (LN -> MHSA -> +, LN -> MLP(GELU) -> +)
    -> LN -> one linear head -> softmax
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .engine import (
    Adam,
    LayerNorm,
    Linear,
    Module,
    MultiHeadSelfAttention,
    Parameter,
    Tensor,
    concat,
    cross_entropy,
    dropout,
    gelu,
    load_checkpoint,
    no_grad,
    save_checkpoint,
    softmax,
)
from .metrics import accuracy, confusion

log = logging.getLogger(__name__)

REPORTED_PARAMETER_COUNT = 667_000


@dataclass
class ClassifierConfig:
    n_channels: int = 6
    window_len: int = 128
    n_classes: int = 6
    patch_size: int = 16
    depth: int = 8
    n_heads: int = 4
    d_emb: int = 64
    d_attn: int = 64
    d_mlp: int = 128
    p_emb: float = 0.4
    p_attn: float = 0.4
    p_mlp: float = 0.4
    pooling: str = "cls"
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    patience: int = 10
    norm_eps: float = 1e-5

    def __post_init__(self):
        if self.window_len % self.patch_size:
            raise ValueError(f"window_len={self.window_len} is not divisible by patch_size={self.patch_size}")
        for name in ("p_emb", "p_attn", "p_mlp"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ValueError(f"{name}={p} must lie in [0, 1)")
        if self.pooling not in ("cls", "mean"):
            raise ValueError(f"pooling must be 'cls' or 'mean', got {self.pooling!r}")

    @property
    def n_patches(self) -> int:
        return self.window_len // self.patch_size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        return cls(**d)


def analytic_parameter_count(cfg: ClassifierConfig) -> int:
    d, inner, m = cfg.d_emb, cfg.n_heads * cfg.d_attn, cfg.d_mlp
    embed = cfg.n_channels * cfg.patch_size * d + d
    tokens = cfg.n_patches + (1 if cfg.pooling == "cls" else 0)
    cls_token = d if cfg.pooling == "cls" else 0
    positional = tokens * d
    block = 2 * (2 * d) + 3 * (d * inner + inner) + (inner * d + d) + (d * m + m) + (m * d + d)
    head = 2 * d + d * cfg.n_classes + cfg.n_classes
    return embed + cls_token + positional + cfg.depth * block + head


def instance_normalize(x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Z-score every channel of every window on its own; std is floored at ``eps``."""
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=-1, keepdims=True)
    std = np.maximum(x.std(axis=-1, keepdims=True), eps)
    return (x - mean) / std


def patchify(x: np.ndarray, patch_size: int) -> np.ndarray:
    """(..., C, W) -> (..., W/P, P*C); each patch is time-major, channel-minor."""
    *lead, c, w = x.shape
    if w % patch_size:
        raise ValueError(f"window of {w} readings does not split into patches of {patch_size}")
    n = w // patch_size
    return np.swapaxes(x, -1, -2).reshape(*lead, n, patch_size * c)


def unpatchify(p: np.ndarray, n_channels: int) -> np.ndarray:
    *lead, n, pc = p.shape
    size = pc // n_channels
    return np.swapaxes(p.reshape(*lead, n * size, n_channels), -1, -2)


class Block(Module):
    def __init__(self, cfg: ClassifierConfig, rng: np.random.Generator):
        self.norm1 = LayerNorm(cfg.d_emb)
        self.attention = MultiHeadSelfAttention(cfg.d_emb, cfg.n_heads, rng, head_dim=cfg.d_attn, dropout=cfg.p_attn)
        self.norm2 = LayerNorm(cfg.d_emb)
        self.fc1 = Linear(cfg.d_emb, cfg.d_mlp, rng)
        self.fc2 = Linear(cfg.d_mlp, cfg.d_emb, rng)
        self.p_mlp = cfg.p_mlp
        self.rng = rng

    def forward(self, h: Tensor) -> Tensor:
        h = h + self.attention(self.norm1(h))
        z = dropout(gelu(self.fc1(self.norm2(h))), self.p_mlp, self.training, self.rng)
        return h + dropout(self.fc2(z), self.p_mlp, self.training, self.rng)


class PatchClassifier(Module):
    def __init__(self, cfg: ClassifierConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = cfg
        self.embed = Linear(cfg.n_channels * cfg.patch_size, cfg.d_emb, rng)
        tokens = cfg.n_patches
        if cfg.pooling == "cls":
            self.cls_token = Parameter(rng.normal(0.0, 0.02, (1, 1, cfg.d_emb)))
            tokens += 1
        self.positional = Parameter(rng.normal(0.0, 0.02, (tokens, cfg.d_emb)))
        self.blocks = [Block(cfg, rng) for _ in range(cfg.depth)]
        self.norm = LayerNorm(cfg.d_emb)
        self.head = Linear(cfg.d_emb, cfg.n_classes, rng)
        self.rng = rng

    def logits(self, windows: np.ndarray) -> Tensor:
        """(B, C, W) raw windows -> (B, n_classes) logits."""
        cfg = self.config
        x = np.asarray(windows, dtype=np.float64)
        if x.ndim != 3 or x.shape[1:] != (cfg.n_channels, cfg.window_len):
            raise ValueError(f"expected windows of shape (B, {cfg.n_channels}, {cfg.window_len}), got {x.shape}")
        patches = patchify(instance_normalize(x, cfg.norm_eps), cfg.patch_size)
        h = self.embed(Tensor(patches))
        if cfg.pooling == "cls":
            h = concat([self.cls_token + Tensor(np.zeros((len(x), 1, cfg.d_emb))), h], axis=1)
        h = dropout(h + self.positional, cfg.p_emb, self.training, self.rng)
        for block in self.blocks:
            h = block(h)
        h = self.norm(h)
        pooled = h[:, 0, :] if cfg.pooling == "cls" else h.mean(axis=1)
        return self.head(pooled)

    def forward(self, windows: np.ndarray) -> Tensor:
        return softmax(self.logits(windows), axis=-1)

    def predict_proba(self, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
        was = self.training
        self.eval()
        with no_grad():
            out = np.concatenate([self(windows[i : i + batch_size]).data for i in range(0, len(windows), batch_size)])
        self.train(was)
        return out

    def predict(self, windows: np.ndarray) -> np.ndarray:
        return self.predict_proba(windows).argmax(axis=1)


def count_parameters(model: Module) -> int:
    return model.num_parameters()


@dataclass
class ClassifierHistory:
    train_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int = 0


def train_classifier(
    x: np.ndarray,
    y: np.ndarray,
    cfg: ClassifierConfig,
    seed: int = 0,
    x_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
) -> tuple[PatchClassifier, ClassifierHistory]:
    """Adam on cross-entropy; with validation data, stop after ``patience``
    epochs without a better accuracy and keep the best weights."""
    model = PatchClassifier(cfg, seed)
    opt = Adam(model.parameters(), lr=cfg.learning_rate)
    rng = np.random.default_rng([seed, 1])
    hist = ClassifierHistory()
    best_state, best_acc, stale = None, -1.0, 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(len(x))
        total = 0.0
        for s in range(0, len(x), cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            loss = cross_entropy(model.logits(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        hist.train_loss.append(total / len(x))
        if x_val is None:
            continue
        acc = accuracy(model.predict(x_val), y_val)
        hist.val_accuracy.append(acc)
        if acc > best_acc:
            best_acc, best_state, stale, hist.best_epoch = acc, model.state_dict(), 0, epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        hist.best_epoch = len(hist.train_loss)
    model.eval()
    return model, hist


@dataclass
class FoldResult:
    held_out_subject: str
    accuracy: float
    confusion: np.ndarray
    best_epoch: int
    train_loss: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "held_out_subject": self.held_out_subject, "accuracy": self.accuracy,
            "confusion": self.confusion.tolist(), "best_epoch": self.best_epoch,
        }


def loso_folds(subjects: Sequence[str]) -> list[tuple[str, np.ndarray, np.ndarray]]:
    """(held-out subject, train mask, validation mask) for every distinct subject."""
    subjects = np.asarray(subjects)
    unique = sorted(set(subjects.tolist()), key=str)
    if len(unique) < 2:
        raise ValueError("leave-one-subject-out needs at least 2 subjects")
    return [(u, subjects != u, subjects == u) for u in unique]


@dataclass
class LosoResult:
    folds: list[FoldResult]
    model: PatchClassifier
    selected_subject: str

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean([f.accuracy for f in self.folds]))


def train_loso(x: np.ndarray, y: np.ndarray, subjects: Sequence[str], cfg: ClassifierConfig, seed: int = 0) -> LosoResult:
    """One fold per training subject; the fold with the best held-out accuracy
    (first on ties) supplies the returned model."""
    folds = []
    best = None
    for k, (held, tr, va) in enumerate(loso_folds(subjects)):
        model, hist = train_classifier(x[tr], y[tr], cfg, seed + k, x[va], y[va])
        pred = model.predict(x[va])
        res = FoldResult(
            held, accuracy(pred, y[va]), confusion(pred, y[va], cfg.n_classes), hist.best_epoch, hist.train_loss
        )
        log.info("fold %s accuracy %.3f", held, res.accuracy)
        folds.append(res)
        if best is None or res.accuracy > best[0].accuracy:
            best = (res, model)
    return LosoResult(folds, best[1], best[0].held_out_subject)


def save_classifier(model: PatchClassifier, path) -> None:
    save_checkpoint(path, model.state_dict(), model.config.to_dict(), {"kind": "patch_classifier"})


def load_classifier(path) -> PatchClassifier:
    tensors, header = load_checkpoint(path)
    if header["extra"].get("kind") != "patch_classifier":
        raise ValueError(f"{path} is not a classifier checkpoint")
    model = PatchClassifier(ClassifierConfig.from_dict(header["config"]))
    model.load_state_dict(tensors)
    return model.eval()
