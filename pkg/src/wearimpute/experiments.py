"""Seeded masking-and-scoring loops behind the per-source and per-gap-length tables."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import baselines
from .frame import TimeSeriesFrame
from .imputer import TransformerImputer, impute_frame as transformer_fill
from .masking import DEFAULT_CLASSES, PER_CHANNEL, Gap, LengthClasses, MaskPlan, apply, mask_by_length_class, mask_by_ratio
from .metrics import MetricsReport, accuracy, score

log = logging.getLogger(__name__)

TABLE_STRATEGIES = ("linear", "mean", "median", "mode", "nearest", "spline", "transformer")


def run_seed(master_seed: int, run: int) -> int:
    """Per-run seed derived from the master seed; stable across processes."""
    return int(np.random.SeedSequence([master_seed, run]).generate_state(1)[0])


def fill(strategy: str, masked: TimeSeriesFrame, model: TransformerImputer | None = None) -> TimeSeriesFrame:
    """Complete a standardized frame with one strategy.

    ``none`` substitutes zeros (the standardized mean) without looking at the
    data, the control used for downstream ablations.
    """
    if strategy == "none":
        return masked.replace(np.where(masked.observed, masked.values, 0.0), np.ones(masked.shape, bool))
    if strategy == "transformer":
        if model is None:
            raise ValueError("the transformer strategy needs a trained model")
        return transformer_fill(model, masked, standardized=True)
    return baselines.impute_frame(masked, strategy)


@dataclass
class Failure:
    strategy: str
    seed: int
    message: str


@dataclass
class BenchResult:
    reports: list[MetricsReport] = field(default_factory=list)
    failures: list[Failure] = field(default_factory=list)


def _score_groups(strategy, seed, pooled: dict[str, tuple[list, list]], out: BenchResult):
    for group, (preds, truths) in pooled.items():
        if preds:
            out.reports.append(score(np.concatenate(preds), np.concatenate(truths), strategy, group, seed))


def _evaluate(frames, plans, strategies, model, seed, group_of, out: BenchResult):
    masked = [apply(f, p) for f, p in zip(frames, plans)]
    for strategy in strategies:
        pooled: dict[str, tuple[list, list]] = {}
        try:
            for (m, truth), f in zip(masked, frames):
                done = fill(strategy, m, model)
                for c in range(f.n_channels):
                    hid = truth.mask[c]
                    if not hid.any():
                        continue
                    pred = done.values[c, hid]
                    if not np.all(np.isfinite(pred)):
                        raise ValueError(f"{strategy} left hidden cells of {f.channel_names[c]} empty")
                    ps, ts = pooled.setdefault(group_of(f, c), ([], []))
                    ps.append(pred)
                    ts.append(f.values[c, hid])
        except Exception as exc:  # one failing strategy must not sink the run
            log.warning("strategy %s failed on seed %d: %s", strategy, seed, exc)
            out.failures.append(Failure(strategy, seed, str(exc)))
            continue
        _score_groups(strategy, seed, pooled, out)


def source_benchmark(
    frames: Sequence[TimeSeriesFrame],
    strategies: Sequence[str],
    model: TransformerImputer | None,
    runs: int,
    master_seed: int,
    ratio: float = 0.1,
    gap_length_range: tuple[int, int] = (1, 120),
    classes: LengthClasses = DEFAULT_CLASSES,
    pattern: str = PER_CHANNEL,
) -> BenchResult:
    """Hide ``ratio`` of each channel in random gaps and score per channel."""
    out = BenchResult()
    for run in range(runs):
        seed = run_seed(master_seed, run)
        plans = [
            mask_by_ratio(f, ratio, gap_length_range, run_seed(seed, i), pattern, classes)
            for i, f in enumerate(frames)
        ]
        _evaluate(frames, plans, strategies, model, seed, lambda f, c: f.channel_names[c], out)
    return out


def length_benchmark(
    frames: Sequence[TimeSeriesFrame],
    strategies: Sequence[str],
    model: TransformerImputer | None,
    runs: int,
    master_seed: int,
    gaps_per_channel: dict[str, int] | None = None,
    classes: LengthClasses = DEFAULT_CLASSES,
    pattern: str = PER_CHANNEL,
) -> BenchResult:
    """Hide gaps of a single length class at a time; scores pool every channel."""
    gaps_per_channel = gaps_per_channel or {"S": 24, "M": 6, "L": 2}
    out = BenchResult()
    for run in range(runs):
        seed = run_seed(master_seed, run)
        for k, cls in enumerate(("S", "M", "L")):
            plans = [
                mask_by_length_class(f, cls, gaps_per_channel[cls], run_seed(seed, 100 * k + i), classes, pattern=pattern)
                for i, f in enumerate(frames)
            ]
            _evaluate(frames, plans, strategies, model, seed, lambda f, c, cls=cls: cls, out)
    return out


def segment_benchmark(
    frames: Sequence[TimeSeriesFrame],
    strategies: Sequence[str],
    model: TransformerImputer | None,
    runs: int,
    master_seed: int,
    length_class: str = "L",
    classes: LengthClasses = DEFAULT_CLASSES,
) -> BenchResult:
    """One gap of ``length_class`` on one random channel of every frame.

    Gap lengths are capped at ``n_times - 2`` so every hidden channel keeps
    observed neighbours for the interpolating baselines.
    """
    lo, hi = classes.range(length_class)
    out = BenchResult()
    for run in range(runs):
        seed = run_seed(master_seed, run)
        rng = np.random.default_rng(seed)
        plans = []
        for f in frames:
            top = min(hi, f.n_times - 2)
            if top < lo:
                raise ValueError(f"frames of {f.n_times} steps cannot hold a {length_class} gap")
            length = int(rng.integers(lo, top + 1))
            start = int(rng.integers(0, f.n_times - length + 1))
            gap = Gap(int(rng.integers(f.n_channels)), start, length, length_class)
            plans.append(MaskPlan(f.shape, [gap], seed=seed))
        _evaluate(frames, plans, strategies, model, seed, lambda f, c: length_class, out)
    return out


DOWNSTREAM_STRATEGIES = ("none", "mean", "linear", "transformer")
DOWNSTREAM_RATES = (0.0, 0.1, 0.2, 0.3, 0.4)


@dataclass(frozen=True)
class DownstreamRow:
    task: str
    strategy: str
    rate: float
    accuracy: float
    seed: int


def degrade_windows(
    windows: np.ndarray,
    strategy: str,
    rate: float,
    seed: int,
    imputer: TransformerImputer | None = None,
    gap_length_range: tuple[int, int] = (1, 32),
) -> np.ndarray:
    """Hide ``rate`` of every channel of every (C, W) window, then fill it back.

    Works in raw units: ``none`` zero-fills, baselines run per channel and the
    transformer standardizes with its own stored statistics.
    """
    out = np.empty_like(windows)
    names = imputer.stats.names if imputer is not None and imputer.stats is not None else None
    for i, w in enumerate(windows):
        frame = TimeSeriesFrame.from_array(w, names=names)
        if rate == 0.0:
            out[i] = w
            continue
        masked, _ = apply(frame, mask_by_ratio(frame, rate, gap_length_range, run_seed(seed, i)))
        if strategy == "transformer":
            if imputer is None:
                raise ValueError("the transformer strategy needs a trained imputer")
            done = transformer_fill(imputer, masked)
        elif strategy == "none":
            done = masked.replace(np.where(masked.observed, masked.values, 0.0), np.ones(masked.shape, bool))
        else:
            done = baselines.impute_frame(masked, strategy)
        out[i] = done.values
    return out


def downstream_grid(
    classifier,
    windows: np.ndarray,
    labels: np.ndarray,
    imputer: TransformerImputer | None,
    runs: int,
    master_seed: int,
    task: str = "har",
    strategies: Sequence[str] = DOWNSTREAM_STRATEGIES,
    rates: Sequence[float] = DOWNSTREAM_RATES,
    gap_length_range: tuple[int, int] = (1, 32),
    failures: list[Failure] | None = None,
) -> list[DownstreamRow]:
    """Accuracy for every (strategy, rate, run); rate 0 reuses the clean score.

    When ``failures`` is given, a strategy that raises is recorded there and
    skipped for that run instead of aborting the grid.
    """
    clean = accuracy(classifier.predict(windows), labels)
    rows = []
    for run in range(runs):
        seed = run_seed(master_seed, run)
        for strategy in strategies:
            try:
                block = []
                for rate in rates:
                    if rate == 0.0:
                        acc = clean
                    else:
                        degraded = degrade_windows(windows, strategy, rate, seed, imputer, gap_length_range)
                        acc = accuracy(classifier.predict(degraded), labels)
                    block.append(DownstreamRow(task, strategy, float(rate), acc, seed))
            except Exception as exc:
                if failures is None:
                    raise
                log.warning("strategy %s failed on seed %d: %s", strategy, seed, exc)
                failures.append(Failure(strategy, seed, str(exc)))
                continue
            rows.extend(block)
    return rows
