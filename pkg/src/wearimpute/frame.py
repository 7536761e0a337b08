"""Multichannel, uniformly sampled series with a per-cell observation mask.

Frames move between tools as CSV (header ``timestamp,subject_id,<channel>...``,
missing cells empty) plus a JSON sidecar holding the sample rate and channel
descriptors. Floats are written with ``repr`` so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class Channel:
    name: str
    unit: str = ""
    sensor: str = ""


def as_rate(rate) -> Fraction:
    if isinstance(rate, Fraction):
        r = rate
    elif isinstance(rate, str):
        r = Fraction(rate)
    elif isinstance(rate, float):
        r = Fraction(rate).limit_denominator(10**6)
    else:
        r = Fraction(rate)
    if r <= 0:
        raise ValueError(f"sample rate must be positive, got {rate}")
    return r


@dataclass
class TimeSeriesFrame:
    """Channels x time values; ``observed`` is False where a value is missing.

    Missing cells always hold NaN so that a stray read shows up immediately.
    """

    channels: list[Channel]
    sample_rate_hz: Fraction
    values: np.ndarray
    observed: np.ndarray
    subject_id: str = ""
    start_time: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.channels = [c if isinstance(c, Channel) else Channel(str(c)) for c in self.channels]
        self.sample_rate_hz = as_rate(self.sample_rate_hz)
        self.values = np.array(self.values, dtype=np.float64)
        self.observed = np.array(self.observed, dtype=bool)
        if self.values.ndim != 2:
            raise ValueError(f"values must be channels x time, got shape {self.values.shape}")
        if self.values.shape != self.observed.shape:
            raise ValueError(f"values {self.values.shape} and observed {self.observed.shape} differ in shape")
        if len(self.channels) != self.values.shape[0]:
            raise ValueError(f"{len(self.channels)} channel descriptors for {self.values.shape[0]} rows")
        self.observed &= np.isfinite(self.values)
        self.values[~self.observed] = np.nan

    @classmethod
    def from_array(cls, values, sample_rate_hz=1, names: Sequence[str] | None = None, subject_id: str = "", **kw):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[None, :]
        if names is None:
            names = [f"ch{i}" for i in range(values.shape[0])]
        return cls([Channel(n) for n in names], sample_rate_hz, values, np.isfinite(values), subject_id, **kw)

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]

    @property
    def n_times(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def channel_names(self) -> list[str]:
        return [c.name for c in self.channels]

    @property
    def period_s(self) -> float:
        return float(1 / self.sample_rate_hz)

    def timestamps(self) -> np.ndarray:
        return self.start_time + np.arange(self.n_times) * self.period_s

    def channel_index(self, name: str) -> int:
        try:
            return self.channel_names.index(name)
        except ValueError:
            raise KeyError(f"no channel named {name!r}; have {self.channel_names}") from None

    def copy(self) -> "TimeSeriesFrame":
        return TimeSeriesFrame(
            list(self.channels), self.sample_rate_hz, self.values.copy(), self.observed.copy(),
            self.subject_id, self.start_time, dict(self.meta),
        )

    def replace(self, values=None, observed=None, **kw) -> "TimeSeriesFrame":
        values = self.values if values is None else values
        observed = np.isfinite(values) if observed is None else observed
        args = dict(
            channels=list(self.channels), sample_rate_hz=self.sample_rate_hz, values=values,
            observed=observed, subject_id=self.subject_id, start_time=self.start_time, meta=dict(self.meta),
        )
        args.update(kw)
        return TimeSeriesFrame(**args)

    def select(self, names: Iterable[str]) -> "TimeSeriesFrame":
        idx = [self.channel_index(n) for n in names]
        return self.replace(self.values[idx], self.observed[idx], channels=[self.channels[i] for i in idx])

    def slice_time(self, start: int, stop: int) -> "TimeSeriesFrame":
        return self.replace(
            self.values[:, start:stop], self.observed[:, start:stop],
            start_time=self.start_time + start * self.period_s,
        )

    def missing_fraction(self) -> dict[str, float]:
        miss = 1.0 - self.observed.mean(axis=1)
        return {c.name: float(m) for c, m in zip(self.channels, miss)}

    def equals(self, other: "TimeSeriesFrame") -> bool:
        """Bit-level equality of everything that defines the frame."""
        return (
            self.channels == other.channels
            and self.sample_rate_hz == other.sample_rate_hz
            and self.subject_id == other.subject_id
            and self.start_time == other.start_time
            and np.array_equal(self.observed, other.observed)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )


def _sidecar(path: Path) -> Path:
    return path.with_suffix(path.suffix + ".json")


def save_frames_csv(frames: Sequence[TimeSeriesFrame], path) -> None:
    """Write frames sharing one channel schema and rate to CSV + sidecar."""
    if not frames:
        raise ValueError("nothing to write")
    path = Path(path)
    first = frames[0]
    for f in frames[1:]:
        if f.channels != first.channels or f.sample_rate_hz != first.sample_rate_hz:
            raise ValueError("all frames in one file must share channels and sample rate")
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "subject_id", *first.channel_names])
        for f in frames:
            ts = f.timestamps()
            for t in range(f.n_times):
                row = [repr(float(ts[t])), f.subject_id]
                row += [repr(float(f.values[c, t])) if f.observed[c, t] else "" for c in range(f.n_channels)]
                w.writerow(row)
    side = {
        "sample_rate_hz": str(first.sample_rate_hz),
        "channels": [{"name": c.name, "unit": c.unit, "sensor": c.sensor} for c in first.channels],
        "frame_starts": [[f.subject_id, repr(float(f.start_time)), f.n_times] for f in frames],
    }
    _sidecar(path).write_text(json.dumps(side, indent=2, sort_keys=True) + "\n")


class SchemaError(ValueError):
    pass


def load_frames_csv(path, expected_channels: Sequence[str] | None = None) -> list[TimeSeriesFrame]:
    """Read frames written by :func:`save_frames_csv` (or hand-built in that layout).

    Rows are grouped into one frame per run of consecutive rows that share a
    subject and continue the uniform time grid; a break in spacing inside a
    frame listed in the sidecar is a schema violation.
    """
    path = Path(path)
    side_path = _sidecar(path)
    if not side_path.exists():
        raise SchemaError(f"missing sidecar descriptor {side_path}")
    side = json.loads(side_path.read_text())
    rate = as_rate(side["sample_rate_hz"])
    channels = [Channel(c["name"], c.get("unit", ""), c.get("sensor", "")) for c in side["channels"]]
    names = [c.name for c in channels]
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader)]
        if header[:2] != ["timestamp", "subject_id"]:
            raise SchemaError(f"{path}: header must start with timestamp,subject_id; got {header[:2]}")
        if header[2:] != names:
            bad = [h for h in header[2:] if h not in names] or [n for n in names if n not in header[2:]]
            raise SchemaError(f"{path}: column {bad[0] if bad else header[2:]!r} does not match the sidecar schema")
        if expected_channels is not None:
            for n in expected_channels:
                if n not in names:
                    raise SchemaError(f"{path}: required column {n!r} is absent")
        rows = list(reader)
    period = float(1 / rate)
    frames: list[TimeSeriesFrame] = []
    starts = side.get("frame_starts")
    pos = 0
    if starts is None:
        # no explicit segmentation: split on subject change or spacing break
        starts = []
        i = 0
        while i < len(rows):
            j = i + 1
            while (
                j < len(rows)
                and rows[j][1] == rows[i][1]
                and abs(float(rows[j][0]) - float(rows[j - 1][0]) - period) <= 1e-6 * max(period, 1.0)
            ):
                j += 1
            starts.append([rows[i][1], rows[i][0], j - i])
            i = j
    for subject, start, n in starts:
        block = rows[pos : pos + n]
        pos += n
        if len(block) != n:
            raise SchemaError(f"{path}: fewer rows than the sidecar declares")
        values = np.full((len(names), n), np.nan)
        ts = np.empty(n)
        for t, row in enumerate(block):
            if len(row) != len(names) + 2:
                raise SchemaError(f"{path}: row has {len(row)} fields, expected {len(names) + 2}")
            if row[1] != subject:
                raise SchemaError(f"{path}: subject {row[1]!r} inside a frame of {subject!r}")
            ts[t] = float(row[0])
            for c, cell in enumerate(row[2:]):
                if cell.strip() != "":
                    values[c, t] = float(cell)
        start_f = float(start)
        expected = start_f + np.arange(n) * period
        if not np.allclose(ts, expected, rtol=0, atol=1e-6 * max(period, 1.0)):
            raise SchemaError(f"{path}: timestamps of subject {subject!r} are not uniformly spaced at {rate} Hz")
        frames.append(TimeSeriesFrame(channels, rate, values, np.isfinite(values), subject, start_f))
    if pos != len(rows):
        raise SchemaError(f"{path}: {len(rows) - pos} rows not covered by the sidecar")
    return frames


def save_frames_npz(frames: Sequence[TimeSeriesFrame], path) -> None:
    """Lossless binary cache."""
    payload = {}
    index = []
    for i, f in enumerate(frames):
        payload[f"values_{i}"] = f.values
        payload[f"observed_{i}"] = f.observed
        index.append({
            "subject_id": f.subject_id,
            "start_time": f.start_time.hex(),
            "rate": str(f.sample_rate_hz),
            "channels": [[c.name, c.unit, c.sensor] for c in f.channels],
            "meta": f.meta,
        })
    payload["index"] = np.frombuffer(json.dumps(index, sort_keys=True).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_frames_npz(path) -> list[TimeSeriesFrame]:
    with np.load(path) as data:
        index = json.loads(bytes(data["index"]).decode())
        return [
            TimeSeriesFrame(
                [Channel(*c) for c in entry["channels"]], entry["rate"], data[f"values_{i}"], data[f"observed_{i}"],
                entry["subject_id"], float.fromhex(entry["start_time"]), entry["meta"],
            )
            for i, entry in enumerate(index)
        ]
