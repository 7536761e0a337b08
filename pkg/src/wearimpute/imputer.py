"""Encoder-only transformer that reconstructs masked cells of multichannel segments.

Pipeline for a (batch, time, channels) segment with a hide-mask:

    zero-fill hidden cells, append the mask as C indicator channels
    -> linear projection 2C -> d_model
    -> + learnable positional encoding (T x d_model)
    -> encoder layer(s): h + MHSA(h); h + BatchNorm(FFN_gelu(h))
    -> linear projection d_model -> C

Training minimises the mean squared error over artificially hidden cells
only, with fresh masks drawn every epoch.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .engine import (
    Adam,
    BatchNorm,
    Linear,
    Module,
    MultiHeadSelfAttention,
    Parameter,
    Tensor,
    gelu,
    load_checkpoint,
    masked_mse,
    no_grad,
    save_checkpoint,
)
from .frame import TimeSeriesFrame
from .masking import LengthClasses
from .signal import ChannelStats

log = logging.getLogger(__name__)

REPORTED_PARAMETER_COUNT = 5434


@dataclass
class ImputerConfig:
    n_channels: int = 10
    window_len: int = 120
    d_model: int = 16
    n_heads: int = 4
    ffn_hidden: int = 18
    n_layers: int = 1
    learning_rate: float = 1e-3
    epochs: int = 400
    batch_size: int = 32
    mask_token_policy: str = "zero_fill_indicator"
    loss_scope: str = "masked"
    train_mask_classes: tuple[str, ...] = ("S", "M", "L")
    length_classes: dict = field(default_factory=lambda: LengthClasses().to_dict())
    max_masked_channel_fraction: float = 0.5

    def __post_init__(self):
        self.train_mask_classes = tuple(self.train_mask_classes)
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} must be divisible by n_heads={self.n_heads}")
        if self.window_len < 1 or self.n_channels < 1:
            raise ValueError("window_len and n_channels must be >= 1")
        if self.mask_token_policy not in ("zero_fill_indicator", "zero_fill"):
            raise ValueError(f"unknown mask_token_policy {self.mask_token_policy!r}")
        if self.loss_scope not in ("masked", "all"):
            raise ValueError(f"unknown loss_scope {self.loss_scope!r}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def input_width(self) -> int:
        return 2 * self.n_channels if self.mask_token_policy == "zero_fill_indicator" else self.n_channels

    def classes(self) -> LengthClasses:
        lc = self.length_classes
        return LengthClasses(tuple(lc["S"]), tuple(lc["M"]), tuple(lc["L"]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train_mask_classes"] = list(self.train_mask_classes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ImputerConfig":
        return cls(**d)


def analytic_parameter_count(config: ImputerConfig) -> int:
    d, f, c = config.d_model, config.ffn_hidden, config.n_channels
    in_proj = config.input_width * d + d
    positional = config.window_len * d
    attention = 4 * (d * d + d)
    ffn = (d * f + f) + (f * d + d)
    norm = 2 * d
    out_proj = d * c + c
    return in_proj + positional + config.n_layers * (attention + ffn + norm) + out_proj


class EncoderLayer(Module):
    def __init__(self, config: ImputerConfig, rng: np.random.Generator):
        d = config.d_model
        self.attention = MultiHeadSelfAttention(d, config.n_heads, rng)
        self.ffn_in = Linear(d, config.ffn_hidden, rng)
        self.ffn_out = Linear(config.ffn_hidden, d, rng)
        self.norm = BatchNorm(d)

    def forward(self, h: Tensor) -> Tensor:
        h = h + self.attention(h)
        return h + self.norm(self.ffn_out(gelu(self.ffn_in(h))))


class TransformerImputer(Module):
    def __init__(self, config: ImputerConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        self.in_proj = Linear(config.input_width, config.d_model, rng)
        self.positional = Parameter(rng.normal(0.0, 0.02, (config.window_len, config.d_model)))
        self.layers = [EncoderLayer(config, rng) for _ in range(config.n_layers)]
        self.out_proj = Linear(config.d_model, config.n_channels, rng)
        self.stats: ChannelStats | None = None

    def encode_inputs(self, values: np.ndarray, hidden: np.ndarray) -> np.ndarray:
        """Zero-fill hidden cells and append indicator channels: (B, T, C) -> (B, T, 2C)."""
        x = np.where(hidden, 0.0, values)
        x = np.where(np.isfinite(x), x, 0.0)
        if self.config.mask_token_policy == "zero_fill_indicator":
            x = np.concatenate([x, hidden.astype(np.float64)], axis=-1)
        return x

    def forward(self, values: np.ndarray, hidden: np.ndarray) -> Tensor:
        """Reconstruction of a (B, T, C) batch; ``hidden`` marks cells to fill."""
        values = np.asarray(values, dtype=np.float64)
        hidden = np.asarray(hidden, dtype=bool)
        if values.shape != hidden.shape or values.ndim != 3:
            raise ValueError(f"values {values.shape} and mask {hidden.shape} must both be (batch, time, channels)")
        _, t, c = values.shape
        if t != self.config.window_len:
            raise ValueError(f"segment length {t} does not match the positional encoding ({self.config.window_len})")
        if c != self.config.n_channels:
            raise ValueError(f"expected {self.config.n_channels} channels, got {c}")
        h = self.in_proj(Tensor(self.encode_inputs(values, hidden))) + self.positional
        for layer in self.layers:
            h = layer(h)
        return self.out_proj(h)

    def reconstruct(self, segment: np.ndarray, hidden: np.ndarray) -> np.ndarray:
        """Eval-mode reconstruction of one channels x time segment."""
        was = self.training
        self.eval()
        with no_grad():
            out = self.forward(segment.T[None], hidden.T[None]).data[0].T
        self.train(was)
        return out

    def attention_maps(self) -> list[np.ndarray]:
        return [layer.attention.last_attention for layer in self.layers]


def count_parameters(model: Module) -> int:
    return model.num_parameters()


# -- training -------------------------------------------------------------------


def sample_training_mask(
    rng: np.random.Generator, observed: np.ndarray, config: ImputerConfig
) -> np.ndarray:
    """Hide-mask for a (B, T, C) batch.

    Each segment hides one contiguous gap on each of k randomly chosen
    channels, k uniform in 1..ceil(max_masked_channel_fraction * C). The gap
    class is drawn uniformly from ``train_mask_classes`` and its length
    uniformly from that class range, capped at T.
    """
    b, t, c = observed.shape
    classes = config.classes()
    kmax = max(1, int(np.ceil(config.max_masked_channel_fraction * c)))
    hidden = np.zeros(observed.shape, dtype=bool)
    for i in range(b):
        k = int(rng.integers(1, kmax + 1))
        for ch in rng.choice(c, size=k, replace=False):
            lo, hi = classes.range(config.train_mask_classes[rng.integers(len(config.train_mask_classes))])
            hi = min(hi, t)
            lo = min(lo, hi)
            length = int(rng.integers(lo, hi + 1))
            start = int(rng.integers(0, t - length + 1))
            hidden[i, start : start + length, ch] = True
    return hidden & observed


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)



class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, epoch: int, state: dict, checkpoint: Path | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.state = state
        self.checkpoint = checkpoint


def _as_segments(segments) -> np.ndarray:
    arr = np.asarray(segments, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"segments must be (N, T, C), got {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError("training needs at least one segment")
    return arr


def evaluate_loss(model: TransformerImputer, segments: np.ndarray, hidden: np.ndarray, batch_size: int = 256) -> float:
    """Masked-cell MSE in eval mode, pooled over all segments."""
    model.eval()
    total, count = 0.0, 0
    with no_grad():
        for s in range(0, len(segments), batch_size):
            v, m = segments[s : s + batch_size], hidden[s : s + batch_size]
            pred = model(v, m | ~np.isfinite(v)).data
            err = np.where(m, pred - np.where(m, v, 0.0), 0.0)
            total += float((err * err).sum())
            count += int(m.sum())
    model.train()
    return total / max(count, 1)


def train_imputer(
    segments,
    config: ImputerConfig,
    seed: int = 0,
    val_segments=None,
    diagnostic_dir=None,
    stats: ChannelStats | None = None,
    progress: bool = False,
) -> tuple[TransformerImputer, TrainingHistory]:
    """Fit a fresh model on standardized (N, T, C) segments (NaN = not observed)."""
    data = _as_segments(segments)
    if data.shape[1] != config.window_len or data.shape[2] != config.n_channels:
        raise ValueError(f"segments {data.shape[1:]} do not match config (T={config.window_len}, C={config.n_channels})")
    model = TransformerImputer(config, seed)
    model.stats = stats
    opt = Adam(model.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng([seed, 1])
    observed = np.isfinite(data)
    history = TrainingHistory()

    val = None
    if val_segments is not None:
        val = _as_segments(val_segments)
        val_hidden = sample_training_mask(np.random.default_rng([seed, 2]), np.isfinite(val), config)

    n = len(data)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for s in range(0, n, config.batch_size):
            idx = order[s : s + config.batch_size]
            v, obs = data[idx], observed[idx]
            hidden = sample_training_mask(rng, obs, config)
            if not hidden.any():
                continue
            pred = model(v, hidden | ~obs)
            target_cells = hidden if config.loss_scope == "masked" else obs
            loss = masked_mse(pred, v, target_cells)
            value = loss.item()
            if not np.isfinite(value):
                _diverged(model, config, epoch, diagnostic_dir, "loss became non-finite")
            opt.zero_grad()
            loss.backward()
            opt.step()
            if not all(np.isfinite(p.data).all() for p in model.parameters()):
                _diverged(model, config, epoch, diagnostic_dir, "parameters became non-finite")
            cells = int(target_cells.sum())
            total += value * cells
            count += cells
        history.train_loss.append(total / max(count, 1))
        if val is not None:
            history.val_loss.append(evaluate_loss(model, val, val_hidden))
        if progress and (epoch % 50 == 0 or epoch == 1):
            log.info("epoch %d train %.4f", epoch, history.train_loss[-1])
    model.eval()
    return model, history


def _diverged(model, config, epoch, diagnostic_dir, reason):
    state = model.state_dict()
    path = None
    if diagnostic_dir is not None:
        path = Path(diagnostic_dir) / f"diverged_epoch{epoch}.ckpt"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_checkpoint(path, state, config.to_dict(), {"reason": reason, "epoch": epoch})
    raise TrainingDiverged(f"training diverged at epoch {epoch}: {reason}", epoch, state, path)


# -- persistence -----------------------------------------------------------------


def save_imputer(model: TransformerImputer, path) -> None:
    extra = {"kind": "transformer_imputer"}
    if model.stats is not None:
        extra["stats"] = model.stats.to_dict()
    save_checkpoint(path, model.state_dict(), model.config.to_dict(), extra)


def load_imputer(path) -> TransformerImputer:
    tensors, header = load_checkpoint(path)
    if header["extra"].get("kind") != "transformer_imputer":
        raise ValueError(f"{path} is not an imputer checkpoint")
    model = TransformerImputer(ImputerConfig.from_dict(header["config"]))
    model.load_state_dict(tensors)
    if "stats" in header["extra"]:
        model.stats = ChannelStats.from_dict(header["extra"]["stats"])
    return model.eval()


# -- inference over frames ---------------------------------------------------------


def covering_windows(missing_times: np.ndarray, n_times: int, window_len: int) -> list[int]:
    """Greedy window starts so that every missing time step lies in some window.

    Starting from the earliest uncovered missing step, the window is centred
    on the missing steps it can reach, then clamped to the frame.
    """
    if n_times < window_len:
        raise ValueError(f"frame of {n_times} steps is shorter than the model window ({window_len})")
    times = np.flatnonzero(missing_times)
    starts = []
    covered_until = -1
    for t0 in times:
        if t0 <= covered_until:
            continue
        reach = times[(times >= t0) & (times < t0 + window_len)]
        centre = (int(reach[0]) + int(reach[-1])) // 2
        start = min(max(centre - window_len // 2, 0), n_times - window_len)
        if start > t0:
            start = int(t0)
        starts.append(start)
        covered_until = start + window_len - 1
    return starts


def _longest_run(flags: np.ndarray) -> int:
    best = run = 0
    for f in flags:
        run = run + 1 if f else 0
        best = max(best, run)
    return best


def impute_standardized(model: TransformerImputer, values: np.ndarray, observed: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Fill unobserved cells of a standardized channels x time array.

    Each missing cell takes the average of the reconstructions from every
    covering window; observed cells are returned untouched.
    """
    c, n = values.shape
    cfg = model.config
    if c != cfg.n_channels:
        raise ValueError(f"frame has {c} channels, model expects {cfg.n_channels}")
    missing = ~observed
    out = np.where(observed, values, np.nan)
    if not missing.any():
        return out
    any_missing = missing.any(axis=0)
    if max(_longest_run(row) for row in missing) > cfg.window_len:
        warnings.warn(
            f"a missing stretch is longer than the model window ({cfg.window_len}); filling with tiled windows",
            stacklevel=2,
        )
    starts = covering_windows(any_missing, n, cfg.window_len)
    acc = np.zeros((c, n))
    hits = np.zeros((c, n))
    segs = np.stack([values[:, s : s + cfg.window_len].T for s in starts])
    hid = np.stack([missing[:, s : s + cfg.window_len].T for s in starts])
    model.eval()
    with no_grad():
        preds = np.concatenate(
            [model(segs[i : i + batch_size], hid[i : i + batch_size]).data for i in range(0, len(starts), batch_size)]
        )
    for s, p in zip(starts, preds):
        acc[:, s : s + cfg.window_len] += p.T
        hits[:, s : s + cfg.window_len] += 1
    fill = missing & (hits > 0)
    out[fill] = acc[fill] / hits[fill]
    return out


def impute_frame(model: TransformerImputer, frame: TimeSeriesFrame, standardized: bool = False) -> TimeSeriesFrame:
    """Complete every missing cell of ``frame``.

    Raw frames are z-scored with the statistics stored on the model and
    mapped back afterwards; pass ``standardized=True`` when the frame is
    already in model units.
    """
    if not standardized:
        if model.stats is None:
            raise ValueError("model carries no standardization stats; pass standardized=True")
        work = model.stats.transform(frame)
    else:
        work = frame
    filled = impute_standardized(model, work.values, work.observed)
    done = work.replace(filled, np.isfinite(filled))
    if not standardized:
        done = model.stats.inverse(done)
        # observed cells must come back bit-identical, not via the round trip
        done.values[frame.observed] = frame.values[frame.observed]
    return done


def segments_from_frames(
    frames: Sequence[TimeSeriesFrame], window_len: int, stride: int, min_observed: float = 0.5
) -> np.ndarray:
    """Cut (N, T, C) training segments; unobserved cells become NaN."""
    out = []
    for f in frames:
        for s in range(0, f.n_times - window_len + 1, stride):
            obs = f.observed[:, s : s + window_len]
            if obs.mean() >= min_observed:
                out.append(np.where(obs, f.values[:, s : s + window_len], np.nan).T)
    if not out:
        raise ValueError("no segment satisfies the window/observation constraints")
    return np.stack(out)


def write_loss_curve(losses: Sequence[float], path) -> None:
    """Two-column CSV (epoch, loss), one row per epoch."""
    lines = ["epoch,loss"] + [f"{i},{v!r}" for i, v in enumerate(losses, start=1)]
    Path(path).write_text("\n".join(lines) + "\n")


def describe(config: ImputerConfig) -> str:
    return json.dumps(
        {"parameters": analytic_parameter_count(config), "reported": REPORTED_PARAMETER_COUNT, **config.to_dict()},
        indent=2,
        sort_keys=True,
    )
