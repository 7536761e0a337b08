"""Dataset adapters and seeded synthetic analogs.

Real-data adapters read on-disk layouts (described per loader) and return
frames or labeled windows. The synthetic generators produce data with the
same shapes so every experiment runs without downloads.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from .frame import Channel, SchemaError, TimeSeriesFrame, as_rate, load_frames_csv
from .signal import (
    LabeledWindow,
    FilterSpec,
    apply_filter,
    decimate_labels,
    median_filter,
    remove_gravity,
    resample,
    slice_labeled_windows,
    slice_windows,
)

NOVARTIS_CHANNELS = ("HR", "HRV", "RESP", "BPW", "EE", "ACC", "BAR", "BP", "ST", "Step")
NOVARTIS_RATE = "1/60"

WESAD_LABELS = {1: "baseline", 2: "stress", 3: "amusement"}
WESAD_BINARY = {"baseline": "non-stress", "amusement": "non-stress", "stress": "stress"}
WESAD_CHANNELS = ("BVP", "EDA", "TEMP", "ACC_x", "ACC_y", "ACC_z")
WESAD_WINDOW = 240
WESAD_STRIDE = 239

UCIHAR_LABELS = {1: "walking", 2: "upstairs", 3: "downstairs", 4: "sitting", 5: "standing", 6: "laying"}
UCIHAR_CHANNELS = ("body_acc_x", "body_acc_y", "body_acc_z", "gyro_x", "gyro_y", "gyro_z")
UCIHAR_RATE = 50
UCIHAR_WINDOW = 128
UCIHAR_STRIDE = 64
UCIHAR_CANONICAL_TEST = (2, 4, 9, 10, 12, 13, 18, 20, 24)


@dataclass
class DatasetManifest:
    name: str
    channels: list[str]
    sample_rate_hz: str
    subjects: list[str]
    train_subjects: list[str]
    test_subjects: list[str]
    labels: list[str] = field(default_factory=list)
    files: list[str] = field(default_factory=list)
    split: str = ""

    def __post_init__(self):
        overlap = set(self.train_subjects) & set(self.test_subjects)
        if overlap:
            raise ValueError(f"subjects in both splits: {sorted(overlap)}")

    def to_dict(self) -> dict:
        return asdict(self)


def split_subjects(subjects: Sequence, n_train: int, seed: int) -> tuple[list, list]:
    """Seeded train/test partition; depends only on the sorted subject set and the seed."""
    ordered = sorted(set(subjects), key=str)
    if not 0 < n_train < len(ordered):
        raise ValueError(f"cannot put {n_train} of {len(ordered)} subjects in the training split")
    perm = np.random.default_rng(seed).permutation(len(ordered))
    train = sorted((ordered[i] for i in perm[:n_train]), key=str)
    test = sorted((ordered[i] for i in perm[n_train:]), key=str)
    return train, test


# -- Novartis-style daily frames ------------------------------------------------


@dataclass
class NovartisData:
    frames: list[TimeSeriesFrame]
    missing_summary: dict[str, float]
    manifest: DatasetManifest


def split_days(frame: TimeSeriesFrame, day_seconds: float = 86400.0) -> list[TimeSeriesFrame]:
    """Cut a frame at calendar-day boundaries of its timestamps."""
    ts = frame.timestamps()
    day = np.floor(ts / day_seconds + 1e-9).astype(np.int64)
    out = []
    for d in np.unique(day):
        idx = np.flatnonzero(day == d)
        part = frame.slice_time(int(idx[0]), int(idx[-1]) + 1)
        part.meta["day"] = int(d)
        out.append(part)
    return out


def missingness_summary(frames: Sequence[TimeSeriesFrame]) -> dict[str, float]:
    """Per-channel percentage of missing cells pooled over frames."""
    names = frames[0].channel_names
    total = sum(f.n_times for f in frames)
    missing = np.sum([(~f.observed).sum(axis=1) for f in frames], axis=0)
    return {n: 100.0 * float(m) / total for n, m in zip(names, missing)}


def load_novartis(path, channels: Sequence[str] = NOVARTIS_CHANNELS) -> NovartisData:
    """Read 1-per-minute physiological parameters from the frame CSV layout.

    Every column present is parsed; ``channels`` are required and selected in
    that order. Returns one frame per subject-day plus the per-channel
    missingness summary.
    """
    raw = load_frames_csv(path, expected_channels=channels)
    frames = []
    for f in raw:
        if f.sample_rate_hz != as_rate(NOVARTIS_RATE):
            raise SchemaError(f"{path}: expected one sample per minute, got {f.sample_rate_hz} Hz")
        frames.extend(split_days(f.select(channels)))
    if len(frames[0].channels) != len(channels):
        raise SchemaError(f"{path}: expected {len(channels)} channels")
    subjects = sorted({f.subject_id for f in frames})
    manifest = DatasetManifest("novartis", list(channels), NOVARTIS_RATE, subjects, subjects, [], files=[str(path)])
    return NovartisData(frames, missingness_summary(frames), manifest)


# -- WESAD wrist signals -----------------------------------------------------------


def read_empatica_csv(path) -> tuple[float, float, np.ndarray]:
    """Empatica E4 export: row 1 start time(s), row 2 sample rate(s), then samples."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing channel file {path}")
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 3:
        raise SchemaError(f"{path}: needs a start-time row, a rate row and samples")
    start = float(rows[0][0])
    rate = float(rows[1][0])
    values = np.array([[float(v) for v in r] for r in rows[2:]], dtype=np.float64)
    return start, rate, values


@dataclass
class WindowSet:
    windows: list[LabeledWindow]
    manifest: DatasetManifest

    def arrays(self, label_map: dict | None = None, labels: Sequence | None = None):
        """Stack to (N, C, W) values, integer labels and subject ids."""
        lab = [label_map[w.label] if label_map else w.label for w in self.windows]
        vocab = list(labels) if labels is not None else sorted(set(lab), key=str)
        index = {v: i for i, v in enumerate(vocab)}
        x = np.stack([w.values for w in self.windows])
        y = np.array([index[v] for v in lab], dtype=np.int64)
        s = np.array([w.subject_id for w in self.windows])
        return x, y, s, vocab

    def for_subjects(self, subjects) -> "WindowSet":
        keep = set(subjects)
        return WindowSet([w for w in self.windows if w.subject_id in keep], self.manifest)


def wesad_subject_frame(subject_dir) -> tuple[TimeSeriesFrame, list]:
    """Filtered, 4 Hz six-channel frame plus per-reading labels for one subject."""
    d = Path(subject_dir)
    parts = {}
    for name in ("BVP", "EDA", "TEMP", "ACC", "labels"):
        parts[name] = read_empatica_csv(d / f"{name}.csv")
    streams = []
    for name in ("BVP", "EDA", "TEMP", "ACC"):
        _, rate, vals = parts[name]
        vals = vals.T
        if name == "EDA":
            vals = apply_filter(vals, FilterSpec("butterworth_lowpass", order=2, cutoff_hz=0.5), rate)
        names = [f"ACC_{a}" for a in "xyz"] if name == "ACC" else [name]
        if vals.shape[0] != len(names):
            raise SchemaError(f"{d / (name + '.csv')}: expected {len(names)} columns, got {vals.shape[0]}")
        fr = TimeSeriesFrame([Channel(n, sensor="E4") for n in names], as_rate(rate), vals, np.isfinite(vals))
        streams.append(resample(fr, 4))
    _, lrate, lvals = parts["labels"]
    factor = lrate / 4
    if factor != int(factor) or factor < 1:
        raise SchemaError(f"{d}: label rate {lrate} Hz is not an integer multiple of 4 Hz")
    labels = decimate_labels([int(v) for v in lvals[:, 0]], int(factor))
    n = min(min(s.n_times for s in streams), len(labels))
    values = np.concatenate([s.values[:, :n] for s in streams])
    observed = np.concatenate([s.observed[:, :n] for s in streams])
    frame = TimeSeriesFrame(
        [c for s in streams for c in s.channels], 4, values, observed, subject_id=d.name, start_time=parts["BVP"][0]
    )
    return frame, labels[:n]


def load_wesad(path, split_seed: int = 0, n_train: int = 11) -> WindowSet:
    """Per-subject directories ``<path>/<subject>/{BVP,EDA,TEMP,ACC,labels}.csv``.

    ``labels.csv`` follows the Empatica layout with the study protocol code
    per reading (1 baseline, 2 stress, 3 amusement; anything else is
    dropped). Windows hold 240 readings at 4 Hz and advance by 239.
    """
    root = Path(path)
    subjects = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not subjects:
        raise SchemaError(f"{root}: no subject directories")
    windows = []
    for s in subjects:
        frame, labels = wesad_subject_frame(root / s)
        for w in slice_labeled_windows(frame, labels, WESAD_WINDOW, WESAD_STRIDE, valid=set(WESAD_LABELS)):
            w.label = WESAD_LABELS[w.label]
            windows.append(w)
    if len(subjects) > n_train:
        train, test = split_subjects(subjects, n_train, split_seed)
        split = f"seeded({split_seed})"
    else:
        train, test, split = subjects, [], "all-train"
    manifest = DatasetManifest(
        "wesad", list(WESAD_CHANNELS), "4", subjects, train, test, sorted(set(WESAD_LABELS.values())), split=split
    )
    return WindowSet(windows, manifest)


# -- UCI-HAR raw inertial signals ------------------------------------------------------


def _read_table(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing file {path}")
    return np.loadtxt(path, ndmin=2)


def ucihar_experiment_frame(raw_dir, exp: int, user: int) -> TimeSeriesFrame:
    """Median(3) + Butterworth(3, 20 Hz) on all axes, then gravity removal on acc."""
    d = Path(raw_dir)
    acc = _read_table(d / f"acc_exp{exp:02d}_user{user:02d}.txt").T
    gyro = _read_table(d / f"gyro_exp{exp:02d}_user{user:02d}.txt").T
    if acc.shape[0] != 3 or gyro.shape[0] != 3:
        raise SchemaError(f"exp {exp}: inertial files need 3 columns")
    n = min(acc.shape[1], gyro.shape[1])
    x = np.concatenate([acc[:, :n], gyro[:, :n]])
    x = median_filter(x, 3)
    x = apply_filter(x, FilterSpec("butterworth_lowpass", order=3, cutoff_hz=20.0), UCIHAR_RATE)
    x[:3] = remove_gravity(x[:3], UCIHAR_RATE)
    return TimeSeriesFrame(
        [Channel(c, sensor="acc" if "acc" in c else "gyro") for c in UCIHAR_CHANNELS],
        UCIHAR_RATE, x, np.ones_like(x, dtype=bool), subject_id=str(user), meta={"experiment": exp},
    )


def load_ucihar(path, split: str = "canonical", split_seed: int = 0) -> WindowSet:
    """``<path>/RawData`` (or ``path`` itself) with acc/gyro files and ``labels.txt``.

    ``labels.txt`` rows are ``exp user activity start end`` with 1-based
    inclusive sample bounds. Activities 1-6 are kept; each labeled segment is
    cut into 128-reading windows advancing by 64.
    """
    raw = Path(path) / "RawData" if (Path(path) / "RawData").is_dir() else Path(path)
    table = _read_table(raw / "labels.txt").astype(np.int64)
    windows = []
    frames: dict[int, TimeSeriesFrame] = {}
    for exp, user, act, start, end in table:
        if act not in UCIHAR_LABELS:
            continue
        if exp not in frames:
            frames[exp] = ucihar_experiment_frame(raw, int(exp), int(user))
        seg = frames[exp].slice_time(int(start) - 1, int(end))
        for o in slice_windows(seg, UCIHAR_WINDOW, UCIHAR_STRIDE):
            windows.append(
                LabeledWindow(
                    seg.values[:, o : o + UCIHAR_WINDOW].copy(), UCIHAR_LABELS[int(act)], str(user),
                    int(start) - 1 + o, seg.observed[:, o : o + UCIHAR_WINDOW].copy(), {"experiment": int(exp)},
                )
            )
    subjects = sorted({str(u) for u in table[:, 1]}, key=int)
    if split == "canonical":
        test = [s for s in subjects if int(s) in UCIHAR_CANONICAL_TEST]
        train = [s for s in subjects if s not in test]
        label = "canonical"
    elif split == "random":
        n_train = int(round(0.7 * len(subjects)))
        train, test = split_subjects(subjects, n_train, split_seed)
        label = f"seeded({split_seed})"
    else:
        raise ValueError(f"split must be 'canonical' or 'random', got {split!r}")
    manifest = DatasetManifest(
        "ucihar", list(UCIHAR_CHANNELS), str(UCIHAR_RATE), subjects, train, test,
        list(UCIHAR_LABELS.values()), split=label,
    )
    return WindowSet(windows, manifest)


# -- synthetic generators -------------------------------------------------------------


@dataclass(frozen=True)
class ChannelSpec:
    """One synthetic channel.

    kind ``dynamic``: mixture of shared damped oscillators (the coupling that
    lets a multichannel model borrow from neighbours), a channel-private
    AR(1) component and white noise. ``smooth``: integrated low-frequency
    drift plus a linear trend. ``discrete``: zero-inflated short bursts of
    integer counts.
    """

    name: str
    kind: str
    shared: float = 0.8
    private: float = 0.15
    noise: float = 0.05
    burst_rate: float = 0.15
    burst_len: tuple[int, int] = (1, 2)
    burst_mean: float = 40.0
    offset: float = 0.0
    scale: float = 1.0


@dataclass
class SyntheticSpec:
    channels: list[ChannelSpec]
    n_subjects: int = 8
    days_per_subject: int = 2
    steps_per_day: int = 1440
    sample_rate_hz: str = NOVARTIS_RATE
    n_latent: int = 3
    latent_period: tuple[float, float] = (8.0, 30.0)
    latent_radius: float = 0.9
    private_phi: float = 0.9
    native_missing: float = 0.0
    seed: int = 0

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _unit(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else x - x.mean()


def damped_oscillator(rng: np.random.Generator, n: int, period: float, radius: float, burn: int = 200) -> np.ndarray:
    """AR(2) noise-driven resonator with poles at radius * exp(+-2j*pi/period)."""
    a1 = 2.0 * radius * np.cos(2.0 * np.pi / period)
    a2 = -radius * radius
    e = rng.standard_normal(n + burn)
    return _unit(lfilter([1.0], [1.0, -a1, -a2], e)[burn:])


def ar1(rng: np.random.Generator, n: int, phi: float, burn: int = 200) -> np.ndarray:
    return _unit(lfilter([1.0], [1.0, -phi], rng.standard_normal(n + burn))[burn:])


def smooth_drift(rng: np.random.Generator, n: int) -> np.ndarray:
    """Slow cycle longer than the frame, a linear trend and a gently bending drift."""
    t = np.arange(n)
    cycle = np.sin(2.0 * np.pi * t / rng.uniform(n, 2.0 * n) + rng.uniform(0.0, 2.0 * np.pi))
    trend = np.linspace(-1.0, 1.0, n) * rng.normal(0.0, 1.0)
    vel = lfilter([1.0], [1.0, -0.999], rng.standard_normal(n))
    return cycle + trend + 0.3 * _unit(np.cumsum(vel))


def zero_inflated_bursts(rng: np.random.Generator, n: int, spec: ChannelSpec) -> np.ndarray:
    x = np.zeros(n)
    t = 0
    while t < n:
        t += int(rng.geometric(spec.burst_rate))
        if t >= n:
            break
        length = int(rng.integers(spec.burst_len[0], spec.burst_len[1] + 1))
        x[t : t + length] = rng.poisson(spec.burst_mean, size=len(x[t : t + length]))
        t += length
    return x


def _mixing(rng: np.random.Generator, n_channels: int, n_latent: int) -> np.ndarray:
    a = rng.standard_normal((n_channels, n_latent))
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def _native_gaps(rng: np.random.Generator, shape, fraction: float) -> np.ndarray:
    """Device-off style outages hitting every channel at once."""
    c, n = shape
    obs = np.ones(shape, dtype=bool)
    target = int(round(fraction * n))
    while (~obs[0]).sum() < target:
        length = int(rng.integers(5, 61))
        start = int(rng.integers(0, max(1, n - length)))
        obs[:, start : start + length] = False
    return obs


def generate_synthetic(spec: SyntheticSpec) -> list[TimeSeriesFrame]:
    """Frames ordered by subject then day; deterministic for ``spec.seed``."""
    root = np.random.default_rng(spec.seed)
    dyn = [i for i, c in enumerate(spec.channels) if c.kind == "dynamic"]
    mixing = _mixing(root, len(dyn), spec.n_latent)
    frames = []
    n = spec.steps_per_day
    for s in range(spec.n_subjects):
        for day in range(spec.days_per_subject):
            rng = np.random.default_rng([spec.seed, s, day])
            lo, hi = spec.latent_period
            latent = np.stack(
                [damped_oscillator(rng, n, rng.uniform(lo, hi), spec.latent_radius) for _ in range(spec.n_latent)]
            )
            values = np.empty((len(spec.channels), n))
            for i, ch in enumerate(spec.channels):
                if ch.kind == "dynamic":
                    shared = _unit(mixing[dyn.index(i)] @ latent)
                    x = (
                        np.sqrt(ch.shared) * shared
                        + np.sqrt(ch.private) * ar1(rng, n, spec.private_phi)
                        + np.sqrt(ch.noise) * rng.standard_normal(n)
                    )
                elif ch.kind == "smooth":
                    x = smooth_drift(rng, n) + np.sqrt(ch.noise) * rng.standard_normal(n)
                elif ch.kind == "discrete":
                    x = zero_inflated_bursts(rng, n, ch)
                else:
                    raise ValueError(f"unknown channel kind {ch.kind!r}")
                values[i] = ch.offset + ch.scale * x
            observed = (
                _native_gaps(rng, values.shape, spec.native_missing)
                if spec.native_missing > 0
                else np.ones(values.shape, dtype=bool)
            )
            frames.append(
                TimeSeriesFrame(
                    [Channel(c.name, sensor=c.kind) for c in spec.channels], spec.sample_rate_hz,
                    values, observed, subject_id=f"s{s:02d}", start_time=day * 86400.0,
                    meta={"day": day, "kinds": [c.kind for c in spec.channels]},
                )
            )
    return frames


def wearable_suite_spec(seed: int = 0, n_subjects: int = 8, days_per_subject: int = 2, steps_per_day: int = 1440) -> SyntheticSpec:
    """Ten-channel minute-level analog: six dynamic, three smooth, one step-count channel."""
    dyn = [ChannelSpec(n, "dynamic") for n in ("HR", "HRV", "RESP", "BPW", "EE", "ACC")]
    smooth = [ChannelSpec(n, "smooth", noise=1e-4) for n in ("BAR", "BP", "ST")]
    step = [ChannelSpec("Step", "discrete")]
    return SyntheticSpec(dyn + smooth + step, n_subjects, days_per_subject, steps_per_day, seed=seed)


def sinusoid_mixture(
    n_segments: int, n_channels: int = 4, window_len: int = 120, seed: int = 0,
    n_components: int = 2, period: tuple[float, float] = (20.0, 60.0), noise: float = 0.05,
) -> np.ndarray:
    """(N, T, C) segments of shared sinusoids mixed into channels plus white noise.

    The mixing matrix is fixed for a given seed (rows scaled to unit norm so
    every channel carries the same signal power); frequencies, phases and
    amplitudes are drawn per segment.
    """
    rng = np.random.default_rng(seed)
    mixing = _mixing(rng, n_channels, n_components)
    data_rng = np.random.default_rng([seed, 1])
    t = np.arange(window_len)
    per = data_rng.uniform(*period, (n_segments, n_components))
    phase = data_rng.uniform(0.0, 2.0 * np.pi, (n_segments, n_components))
    amp = data_rng.uniform(0.7, 1.3, (n_segments, n_components))
    waves = amp[:, :, None] * np.sin(2.0 * np.pi * t / per[:, :, None] + phase[:, :, None])
    x = np.einsum("ck,nkt->ntc", mixing, waves)
    return x + noise * data_rng.standard_normal(x.shape)


# -- synthetic activity-recognition analog ---------------------------------------------------


@dataclass
class HarSpec:
    n_subjects: int = 8
    windows_per_class: int = 24
    n_classes: int = 6
    window_len: int = 128
    sample_rate_hz: int = 50
    noise: float = 0.2
    subject_jitter: float = 0.3
    static_amplitude: float = 0.3
    seed: int = 0


def har_class_profiles(rng: np.random.Generator, n_classes: int, static_amplitude: float = 0.3) -> list[dict]:
    """Per-class rhythm (Hz), axis amplitudes, axis phase offsets and harmonic mix.

    The first half of the classes are locomotion-like; the rest are postures
    whose weak sway sits near the sensor noise floor and is easily confused.
    """
    profiles = []
    for k in range(n_classes):
        dynamic = k < n_classes // 2
        profiles.append({
            "freq": rng.uniform(1.5, 2.1) if dynamic else rng.uniform(0.4, 0.7),
            "amp": rng.uniform(0.6, 1.4, 3) * (1.0 if dynamic else static_amplitude),
            "phase": rng.uniform(0.0, 2.0 * np.pi, 3),
            "harmonic": rng.uniform(-0.5, 0.5, 3),
        })
    return profiles


def generate_har(spec: HarSpec) -> WindowSet:
    """Labeled 6-channel windows from a rigid-body toy model.

    The three accelerometer axes share one class rhythm with class-specific
    amplitudes, phase offsets and harmonic content. The gyroscope axes are a
    fixed linear image (one sensor geometry for every class and subject) of
    the accelerometer's time derivative, so each sensor group carries
    information about the other.
    """
    root = np.random.default_rng(spec.seed)
    profiles = har_class_profiles(root, spec.n_classes, spec.static_amplitude)
    geometry = root.standard_normal((3, 3)) / np.sqrt(3.0)
    t = np.arange(spec.window_len) / spec.sample_rate_hz
    windows = []
    for s in range(spec.n_subjects):
        rng = np.random.default_rng([spec.seed, s])
        tempo = 1.0 + spec.subject_jitter * rng.standard_normal()
        for k, prof in enumerate(profiles):
            for i in range(spec.windows_per_class):
                f = prof["freq"] * tempo * rng.uniform(0.9, 1.1)
                w = 2.0 * np.pi * f
                arg = w * t[None, :] + prof["phase"][:, None] + rng.uniform(0.0, 2.0 * np.pi)
                h = (prof["harmonic"] + 0.1 * rng.standard_normal(3))[:, None]
                amp = prof["amp"][:, None] * rng.uniform(0.85, 1.15)
                acc = amp * (np.sin(arg) + h * np.sin(2.0 * arg))
                dacc = amp * (np.cos(arg) + 2.0 * h * np.cos(2.0 * arg))
                gyro = geometry @ dacc
                x = np.concatenate([acc, gyro]) + spec.noise * rng.standard_normal((6, spec.window_len))
                windows.append(LabeledWindow(x, k, f"s{s:02d}", i * spec.window_len, np.ones(x.shape, bool)))
    subjects = [f"s{s:02d}" for s in range(spec.n_subjects)]
    manifest = DatasetManifest(
        "synthetic-har", list(UCIHAR_CHANNELS), str(spec.sample_rate_hz), subjects, subjects, [],
        [str(k) for k in range(spec.n_classes)], split="unsplit",
    )
    return WindowSet(windows, manifest)


def autocorrelation(x, lag: int) -> float:
    """Pearson correlation between the series and itself shifted by ``lag``.

    The lagged-pair form is used instead of the single-variance estimator,
    which understates persistence for trending series.
    """
    x = np.asarray(x, dtype=np.float64)
    if lag == 0:
        return 1.0
    a, b = x[:-lag], x[lag:]
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b) / den if den > 0 else 0.0
