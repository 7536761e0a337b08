"""Digital filtering, decimation, standardization and window slicing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import signal as sps

from .frame import TimeSeriesFrame, as_rate


@dataclass(frozen=True)
class FilterSpec:
    kind: str  # "butterworth_lowpass" or "median"
    order: int = 2
    cutoff_hz: float | None = None
    kernel_width: int = 3

    def __post_init__(self):
        if self.kind == "butterworth_lowpass":
            if self.order < 1:
                raise ValueError("filter order must be positive")
            if self.cutoff_hz is None or self.cutoff_hz <= 0:
                raise ValueError("butterworth filter needs a positive cutoff_hz")
        elif self.kind == "median":
            if self.kernel_width < 1 or self.kernel_width % 2 == 0:
                raise ValueError("median kernel width must be a positive odd integer")
        else:
            raise ValueError(f"unknown filter kind {self.kind!r}")


def design_butterworth(order: int, cutoff_hz: float, sample_rate_hz: float) -> np.ndarray:
    """Low-pass Butterworth as second-order sections ``[b0 b1 b2 1 a1 a2]``.

    Analog prototype poles are mapped through the bilinear transform with the
    cutoff pre-warped, so the -3 dB point lands exactly on ``cutoff_hz``.
    Odd orders get one first-order section (stored with zero b2/a2).
    """
    fs = float(sample_rate_hz)
    if order < 1:
        raise ValueError("order must be >= 1")
    if not 0 < cutoff_hz < fs / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({fs / 2} Hz)")
    k = math.tan(math.pi * cutoff_hz / fs)
    k2 = k * k
    sections = []
    for i in range(order // 2):
        # analog pole pair s^2 + 2 sin(theta) s + 1, theta = pi (2i + 1) / (2 order)
        damping = 2.0 * math.sin(math.pi * (2 * i + 1) / (2 * order))
        a0 = 1.0 + damping * k + k2
        sections.append([k2 / a0, 2 * k2 / a0, k2 / a0, 1.0, (2 * k2 - 2.0) / a0, (1.0 - damping * k + k2) / a0])
    if order % 2:
        a0 = 1.0 + k
        sections.append([k / a0, k / a0, 0.0, 1.0, (k - 1.0) / a0, 0.0])
    return np.array(sections)


def sos_frequency_response(sos: np.ndarray, freqs_hz, sample_rate_hz: float) -> np.ndarray:
    """Complex response of the cascade at the given frequencies."""
    w = 2 * np.pi * np.asarray(freqs_hz, dtype=float) / float(sample_rate_hz)
    z1 = np.exp(-1j * w)
    z2 = z1 * z1
    h = np.ones_like(z1)
    for b0, b1, b2, _, a1, a2 in sos:
        h *= (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2)
    return h


def filtfilt(x, sos: np.ndarray, order: int | None = None) -> np.ndarray:
    """Zero-phase forward-backward filtering along the last axis.

    Edges use odd reflection over ``3 * order`` samples and steady-state
    initial conditions, so constant inputs pass through unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    if order is None:
        order = int(sum(2 if row[2] != 0 or row[5] != 0 else 1 for row in sos))
    pad = 3 * order
    n = x.shape[-1]
    if n <= pad:
        raise ValueError(f"signal of length {n} is too short for zero-phase filtering (needs > {pad})")
    left = 2 * x[..., :1] - x[..., pad:0:-1]
    right = 2 * x[..., -1:] - x[..., -2 : -pad - 2 : -1]
    ext = np.concatenate([left, x, right], axis=-1)
    zi = sps.sosfilt_zi(sos)  # (sections, 2)
    zshape = (sos.shape[0],) + x.shape[:-1] + (2,)

    def run(sig):
        z0 = np.broadcast_to(zi.reshape((sos.shape[0],) + (1,) * (x.ndim - 1) + (2,)), zshape) * sig[..., 0][None, ..., None]
        y, _ = sps.sosfilt(sos, sig, axis=-1, zi=z0)
        return y

    y = run(ext)
    y = run(y[..., ::-1])[..., ::-1]
    return np.ascontiguousarray(y[..., pad : pad + n])


def median_filter(x, kernel_width: int = 3) -> np.ndarray:
    """Running median along the last axis, edges replicated."""
    if kernel_width % 2 == 0 or kernel_width < 1:
        raise ValueError("kernel width must be odd")
    x = np.asarray(x, dtype=np.float64)
    h = kernel_width // 2
    padded = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(h, h)], mode="edge")
    return np.median(sliding_window_view(padded, kernel_width, axis=-1), axis=-1)


def apply_filter(x, spec: FilterSpec, sample_rate_hz: float) -> np.ndarray:
    if spec.kind == "median":
        return median_filter(x, spec.kernel_width)
    sos = design_butterworth(spec.order, spec.cutoff_hz, sample_rate_hz)
    return filtfilt(x, sos, spec.order)


def remove_gravity(acc, sample_rate_hz: float, cutoff_hz: float = 0.3, order: int = 3) -> np.ndarray:
    """Subtract the slow (gravity) component from 3-axis acceleration (3 x T)."""
    acc = np.asarray(acc, dtype=np.float64)
    if acc.ndim != 2 or acc.shape[0] != 3:
        raise ValueError(f"expected a 3 x T acceleration array, got {acc.shape}")
    sos = design_butterworth(order, cutoff_hz, sample_rate_hz)
    return acc - filtfilt(acc, sos, order)


def _fill_for_filtering(row: np.ndarray, observed: np.ndarray) -> np.ndarray:
    if observed.all():
        return row
    if not observed.any():
        return row
    t = np.arange(row.size)
    return np.interp(t, t[observed], row[observed])


def resample(frame: TimeSeriesFrame, target_hz, antialias: bool = True, order: int = 4) -> TimeSeriesFrame:
    """Integer-factor decimation with a Butterworth anti-alias filter.

    An output cell is observed only when every input cell it covers is
    observed. Missing inputs are bridged linearly before filtering and the
    bridged values never surface, since those outputs stay unobserved.
    """
    target = as_rate(target_hz)
    ratio = frame.sample_rate_hz / target
    if ratio < 1:
        raise ValueError(f"cannot upsample from {frame.sample_rate_hz} Hz to {target} Hz")
    if ratio.denominator != 1:
        raise ValueError(
            f"{frame.sample_rate_hz} Hz -> {target} Hz is not an integer decimation; "
            "choose a target rate that divides the source rate"
        )
    factor = int(ratio)
    if factor == 1:
        return frame.copy()
    n_out = frame.n_times // factor
    vals = np.empty((frame.n_channels, frame.n_times))
    for c in range(frame.n_channels):
        vals[c] = _fill_for_filtering(frame.values[c], frame.observed[c])
    if antialias:
        sos = design_butterworth(order, 0.45 * float(target), float(frame.sample_rate_hz))
        good = np.isfinite(vals).all(axis=1)
        if good.any():
            vals[good] = filtfilt(vals[good], sos, order)
    out_vals = vals[:, : n_out * factor : factor]
    blocks = frame.observed[:, : n_out * factor].reshape(frame.n_channels, n_out, factor)
    out_obs = blocks.all(axis=2)
    return frame.replace(out_vals, out_obs, sample_rate_hz=target)


def decimate_labels(labels: Sequence[Hashable], factor: int, mixed=None) -> list:
    """One label per block of ``factor`` readings; blocks that mix labels get ``mixed``."""
    labels = list(labels)
    out = []
    for i in range(len(labels) // factor):
        block = labels[i * factor : (i + 1) * factor]
        out.append(block[0] if all(b == block[0] for b in block) else mixed)
    return out


def slice_windows(length, window_len: int, stride: int) -> list[int]:
    """Start offsets of full windows: 0, stride, 2*stride, ... while they fit."""
    n = length.n_times if isinstance(length, TimeSeriesFrame) else int(length)
    if window_len < 1 or stride < 1:
        raise ValueError("window length and stride must be positive")
    if n < window_len:
        return []
    return list(range(0, n - window_len + 1, stride))


@dataclass
class LabeledWindow:
    values: np.ndarray  # channels x window_len
    label: Hashable
    subject_id: str
    offset: int
    observed: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def window_len(self) -> int:
        return self.values.shape[1]


def label_window_offsets(labels: Sequence[Hashable], window_len: int, stride: int, valid=None) -> list[int]:
    """Offsets of label-homogeneous windows.

    A window is emitted when all of its readings share one (valid) label and
    the next one starts ``stride`` later. When a tentative window contains a
    label change, the next start moves to the first reading of the new label
    and the readings skipped over are discarded.
    """
    labels = list(labels)
    n = len(labels)
    offsets = []
    start = 0
    while start + window_len <= n:
        head = labels[start]
        if valid is not None and head not in valid:
            j = start + 1
            while j < n and labels[j] == head:
                j += 1
            start = j
            continue
        change = next((i for i in range(start + 1, start + window_len) if labels[i] != head), None)
        if change is None:
            offsets.append(start)
            start += stride
        else:
            start = change
    return offsets


def slice_labeled_windows(
    frame: TimeSeriesFrame,
    labels: Sequence[Hashable],
    window_len: int,
    stride: int,
    valid=None,
) -> list[LabeledWindow]:
    if len(labels) != frame.n_times:
        raise ValueError(f"{len(labels)} labels for {frame.n_times} readings")
    return [
        LabeledWindow(
            frame.values[:, o : o + window_len].copy(),
            labels[o],
            frame.subject_id,
            o,
            frame.observed[:, o : o + window_len].copy(),
        )
        for o in label_window_offsets(labels, window_len, stride, valid)
    ]


@dataclass
class ChannelStats:
    """Per-channel z-score parameters fitted on a designated stats split."""

    names: list[str]
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, frames: TimeSeriesFrame | Sequence[TimeSeriesFrame]) -> "ChannelStats":
        frames = [frames] if isinstance(frames, TimeSeriesFrame) else list(frames)
        if not frames:
            raise ValueError("no frames to fit statistics on")
        names = frames[0].channel_names
        mean = np.empty(len(names))
        std = np.empty(len(names))
        for c, name in enumerate(names):
            pts = np.concatenate([f.values[c][f.observed[c]] for f in frames])
            if pts.size < 2:
                raise ValueError(f"channel {name!r} has fewer than 2 observed points")
            mean[c] = pts.mean()
            std[c] = pts.std()
            if not std[c] > 1e-12 * max(1.0, abs(mean[c])):
                raise ValueError(f"channel {name!r} is constant; cannot standardize")
        return cls(list(names), mean, std)

    def _check(self, frame: TimeSeriesFrame):
        if frame.channel_names != self.names:
            raise ValueError(f"frame channels {frame.channel_names} do not match stats {self.names}")

    def transform(self, frame: TimeSeriesFrame) -> TimeSeriesFrame:
        self._check(frame)
        return frame.replace((frame.values - self.mean[:, None]) / self.std[:, None], frame.observed)

    def inverse(self, frame: TimeSeriesFrame) -> TimeSeriesFrame:
        self._check(frame)
        return frame.replace(frame.values * self.std[:, None] + self.mean[:, None], frame.observed)

    def to_dict(self) -> dict:
        return {"names": self.names, "mean": [float(m) for m in self.mean], "std": [float(s) for s in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        return cls(list(d["names"]), np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))


def standardize(frame: TimeSeriesFrame, stats_source=None) -> tuple[TimeSeriesFrame, ChannelStats]:
    """Z-score each channel on observed points.

    ``stats_source`` may be precomputed :class:`ChannelStats`, a frame or a
    list of frames (the training split); by default the frame itself.
    """
    if stats_source is None:
        stats = ChannelStats.fit(frame)
    elif isinstance(stats_source, ChannelStats):
        stats = stats_source
    else:
        stats = ChannelStats.fit(stats_source)
    return stats.transform(frame), stats


def preprocessing_rates_compatible(source_hz, target_hz) -> bool:
    ratio = as_rate(source_hz) / as_rate(target_hz)
    return ratio >= 1 and ratio.denominator == 1


__all__ = [
    "ChannelStats",
    "FilterSpec",
    "LabeledWindow",
    "apply_filter",
    "decimate_labels",
    "design_butterworth",
    "filtfilt",
    "label_window_offsets",
    "median_filter",
    "preprocessing_rates_compatible",
    "remove_gravity",
    "resample",
    "slice_labeled_windows",
    "slice_windows",
    "sos_frequency_response",
]
