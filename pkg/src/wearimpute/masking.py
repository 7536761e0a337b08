"""Reproducible artificial missingness over observed frames.

A :class:`MaskPlan` is a list of contiguous gaps (channel, start, length,
length class). Generators only place gaps over observed cells, keep at least
one observed cell between neighbouring gaps on a channel, and derive every
random draw from the plan's seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .frame import TimeSeriesFrame

PER_CHANNEL = "per_channel"
ALL_SENSORS = "all_sensors"
_MAX_RESTARTS = 200


@dataclass(frozen=True)
class LengthClasses:
    """Inclusive gap-length ranges in samples at the frame's native rate."""

    S: tuple[int, int] = (1, 5)
    M: tuple[int, int] = (6, 30)
    L: tuple[int, int] = (31, 120)

    def range(self, cls: str) -> tuple[int, int]:
        if cls not in ("S", "M", "L"):
            raise ValueError(f"unknown length class {cls!r}")
        return getattr(self, cls)

    def classify(self, length: int) -> str:
        for name in ("S", "M", "L"):
            lo, hi = getattr(self, name)
            if lo <= length <= hi:
                return name
        return "-"

    def to_dict(self) -> dict:
        return {"S": list(self.S), "M": list(self.M), "L": list(self.L)}


DEFAULT_CLASSES = LengthClasses()


@dataclass(frozen=True)
class Gap:
    channel: int
    start: int
    length: int
    length_class: str = "-"

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass
class MaskPlan:
    shape: tuple[int, int]
    gaps: list[Gap] = field(default_factory=list)
    seed: int | None = None
    ratio: float | None = None
    pattern: str = PER_CHANNEL

    def gap_mask(self) -> np.ndarray:
        """Boolean channels x time grid of every cell covered by a gap."""
        m = np.zeros(self.shape, dtype=bool)
        for g in self.gaps:
            m[g.channel, g.start : g.stop] = True
        return m

    def cell_mask(self, observed: np.ndarray) -> np.ndarray:
        """Cells this plan hides in a frame: gap cells that are observed there."""
        if observed.shape != tuple(self.shape):
            raise ValueError(f"plan shape {self.shape} does not match frame shape {observed.shape}")
        return self.gap_mask() & observed

    def cells(self, observed: np.ndarray) -> set[tuple[int, int]]:
        c, t = np.nonzero(self.cell_mask(observed))
        return set(zip(c.tolist(), t.tolist()))

    def n_cells(self) -> int:
        return sum(g.length for g in self.gaps)

    def validate(self) -> None:
        c, t = self.shape
        seen = np.zeros(self.shape, dtype=int)
        for g in self.gaps:
            if not (0 <= g.channel < c and 0 <= g.start and g.length >= 1 and g.stop <= t):
                raise ValueError(f"gap {g} falls outside a {self.shape} frame")
            seen[g.channel, g.start : g.stop] += 1
        if (seen > 1).any():
            raise ValueError("gaps overlap")

    # -- text serialization -------------------------------------------------------
    def dumps(self) -> str:
        lines = [
            "# maskplan v1",
            f"# shape={self.shape[0]}x{self.shape[1]}",
            f"# seed={'' if self.seed is None else self.seed}",
            f"# ratio={'' if self.ratio is None else repr(float(self.ratio))}",
            f"# pattern={self.pattern}",
            "channel,start,length,class",
        ]
        lines += [f"{g.channel},{g.start},{g.length},{g.length_class}" for g in self.gaps]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "MaskPlan":
        header = {}
        gaps = []
        for line in text.splitlines():
            if line.startswith("#"):
                if "=" in line:
                    k, v = line[1:].strip().split("=", 1)
                    header[k] = v
            elif line and not line.startswith("channel,"):
                ch, st, ln, lc = line.split(",")
                gaps.append(Gap(int(ch), int(st), int(ln), lc))
        c, t = header["shape"].split("x")
        plan = cls(
            (int(c), int(t)),
            gaps,
            int(header["seed"]) if header.get("seed") else None,
            float(header["ratio"]) if header.get("ratio") else None,
            header.get("pattern", PER_CHANNEL),
        )
        plan.validate()
        return plan

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "MaskPlan":
        return cls.loads(Path(path).read_text())


def _lengths_for_target(rng: np.random.Generator, target: int, lo: int, hi: int) -> list[int]:
    """Random gap lengths in [lo, hi] summing to ``target`` (or target +/- 1)."""
    for t in (target, target - 1, target + 1):
        if t <= 0:
            continue
        k_min = -(-t // hi)
        k_max = t // lo
        if k_min > k_max:
            continue
        lengths = []
        total = 0
        while total < t:
            lengths.append(int(rng.integers(lo, hi + 1)))
            total += lengths[-1]
        while len(lengths) > k_max:
            total -= lengths.pop()
        while len(lengths) < k_min:
            lengths.append(lo)
            total += lo
        # nudge lengths toward the exact total while staying inside [lo, hi]
        excess = total - t
        order = rng.permutation(len(lengths))
        i = 0
        while excess != 0:
            j = order[i % len(lengths)]
            if excess > 0 and lengths[j] > lo:
                lengths[j] -= 1
                excess -= 1
            elif excess < 0 and lengths[j] < hi:
                lengths[j] += 1
                excess += 1
            i += 1
        return lengths
    raise ValueError(f"cannot split {target} masked cells into gaps of length {lo}..{hi}")


def _place(rng: np.random.Generator, free: np.ndarray, lengths: Sequence[int]) -> list[tuple[int, int]] | None:
    """Place gaps on a 1-D availability row, keeping one free cell between gaps.

    Gaps go longest first; each start is drawn uniformly from the positions
    where it currently fits. Returns None when some gap finds no room.
    """
    avail = free.copy()
    placed = []
    for length in sorted(lengths, reverse=True):
        if length > avail.size:
            return None
        win = np.lib.stride_tricks.sliding_window_view(avail, length).all(axis=1)
        starts = np.flatnonzero(win)
        if starts.size == 0:
            return None
        s = int(starts[rng.integers(starts.size)])
        placed.append((s, length))
        avail[max(0, s - 1) : s + length + 1] = False
    return sorted(placed)


def _place_with_restarts(rng, free, lengths, what: str):
    for _ in range(_MAX_RESTARTS):
        spots = _place(rng, free, lengths)
        if spots is not None:
            return spots
    raise ValueError(f"infeasible mask: could not place {len(lengths)} gaps ({sum(lengths)} cells) on {what}")


def mask_by_ratio(
    frame: TimeSeriesFrame,
    ratio: float,
    gap_length_range: tuple[int, int],
    seed: int,
    pattern: str = PER_CHANNEL,
    classes: LengthClasses = DEFAULT_CLASSES,
    channels: Sequence[int] | None = None,
) -> MaskPlan:
    """Hide about ``ratio`` of each channel's observed cells in contiguous gaps.

    With ``pattern="all_sensors"`` the same intervals are hidden on every
    channel (the device-off shape), placed where all channels are observed.
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"ratio must be in [0, 1), got {ratio}")
    lo, hi = gap_length_range
    if not 1 <= lo <= hi:
        raise ValueError(f"bad gap length range {gap_length_range}")
    rng = np.random.default_rng(seed)
    plan = MaskPlan(frame.shape, [], seed, ratio, pattern)
    if ratio == 0.0:
        return plan
    chans = range(frame.n_channels) if channels is None else channels
    if pattern == ALL_SENSORS:
        free = frame.observed[list(chans)].all(axis=0)
        target = int(round(ratio * free.sum()))
        lengths = _lengths_for_target(rng, target, lo, hi)
        for s, n in _place_with_restarts(rng, free, lengths, "the shared time axis"):
            for c in chans:
                plan.gaps.append(Gap(c, s, n, classes.classify(n)))
    elif pattern == PER_CHANNEL:
        for c in chans:
            free = frame.observed[c]
            target = int(round(ratio * free.sum()))
            if target == 0:
                continue
            lengths = _lengths_for_target(rng, target, lo, hi)
            for s, n in _place_with_restarts(rng, free, lengths, f"channel {c}"):
                plan.gaps.append(Gap(c, s, n, classes.classify(n)))
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    plan.gaps.sort(key=lambda g: (g.channel, g.start))
    return plan


def mask_by_length_class(
    frame: TimeSeriesFrame,
    length_class: str,
    count: int,
    seed: int,
    classes: LengthClasses = DEFAULT_CLASSES,
    channels: Sequence[int] | None = None,
    pattern: str = PER_CHANNEL,
) -> MaskPlan:
    """Place ``count`` gaps of one length class on each selected channel."""
    lo, hi = classes.range(length_class)
    rng = np.random.default_rng(seed)
    plan = MaskPlan(frame.shape, [], seed, None, pattern)
    if count <= 0:
        return plan
    chans = list(range(frame.n_channels) if channels is None else channels)
    if frame.n_times < lo:
        raise ValueError(f"frame of {frame.n_times} samples is shorter than the {length_class} class minimum {lo}")
    if pattern == ALL_SENSORS:
        free = frame.observed[chans].all(axis=0)
        lengths = [int(rng.integers(lo, min(hi, free.size) + 1)) for _ in range(count)]
        for s, n in _place_with_restarts(rng, free, lengths, "the shared time axis"):
            plan.gaps.extend(Gap(c, s, n, length_class) for c in chans)
    else:
        for c in chans:
            free = frame.observed[c]
            lengths = [int(rng.integers(lo, min(hi, free.size) + 1)) for _ in range(count)]
            for s, n in _place_with_restarts(rng, free, lengths, f"channel {c}"):
                plan.gaps.append(Gap(c, s, n, length_class))
    plan.gaps.sort(key=lambda g: (g.channel, g.start))
    return plan


def mask_all_sensors(frame: TimeSeriesFrame, start: int, length: int, classes: LengthClasses = DEFAULT_CLASSES) -> MaskPlan:
    """Hide one interval on every channel at once.

    Cells already missing inside the interval stay out of the hidden set; the
    plan still lists one identical gap per channel.
    """
    if length < 1 or start < 0 or start + length > frame.n_times:
        raise ValueError(f"interval [{start}, {start + length}) outside a frame of {frame.n_times} samples")
    cls = classes.classify(length)
    return MaskPlan(frame.shape, [Gap(c, start, length, cls) for c in range(frame.n_channels)], None, None, ALL_SENSORS)


@dataclass
class GroundTruth:
    """Values hidden by a plan, kept for scoring and restoration."""

    mask: np.ndarray  # channels x time, True where hidden
    values: np.ndarray  # hidden values in row-major cell order

    def hidden(self) -> np.ndarray:
        out = np.full(self.mask.shape, np.nan)
        out[self.mask] = self.values
        return out


def apply(frame: TimeSeriesFrame, plan: MaskPlan) -> tuple[TimeSeriesFrame, GroundTruth]:
    """Return a masked copy of ``frame`` plus the hidden values; ``frame`` is untouched."""
    plan.validate()
    mask = plan.cell_mask(frame.observed)
    masked = frame.copy()
    truth = GroundTruth(mask, frame.values[mask].copy())
    masked.observed[mask] = False
    masked.values[mask] = np.nan
    return masked, truth


def restore(masked: TimeSeriesFrame, truth: GroundTruth) -> TimeSeriesFrame:
    out = masked.copy()
    out.values[truth.mask] = truth.values
    out.observed[truth.mask] = True
    return out
