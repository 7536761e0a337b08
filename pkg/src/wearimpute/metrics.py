"""Reconstruction and classification scores over hidden cells, plus run aggregation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.shape != t.shape:
        raise ValueError(f"prediction has {p.size} points, truth has {t.size}")
    if p.size == 0:
        raise ValueError("no points to score")
    return p, t


def mae(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.mean(np.abs(p - t)))


def rmse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    return float(np.sqrt(np.mean((p - t) ** 2)))


@dataclass(frozen=True)
class Correlation:
    value: float
    degenerate: bool = False

    def __float__(self) -> float:
        return self.value


def pearson(pred, truth) -> Correlation:
    """Product-moment correlation; a constant side gives 0 flagged degenerate."""
    p, t = _pair(pred, truth)
    if p.size < 2:
        raise ValueError("correlation needs at least 2 points")
    dp = p - p.mean()
    dt = t - t.mean()
    den = np.sqrt(float(dp @ dp) * float(dt @ dt))
    if den == 0.0:
        return Correlation(0.0, True)
    return Correlation(float(np.clip((dp @ dt) / den, -1.0, 1.0)))


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(x.size)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(pred, truth) -> Correlation:
    p, t = _pair(pred, truth)
    return pearson(average_ranks(p), average_ranks(t))


def accuracy(pred_labels, true_labels) -> float:
    p = np.asarray(pred_labels)
    t = np.asarray(true_labels)
    if p.shape != t.shape or p.size == 0:
        raise ValueError("label arrays must be non-empty and equally long")
    return float(np.mean(p == t))


def confusion(pred_labels, true_labels, n_classes: int) -> np.ndarray:
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (np.asarray(true_labels), np.asarray(pred_labels)), 1)
    return m


METRICS = ("mae", "rmse", "pearson", "spearman")


@dataclass(frozen=True)
class MetricsReport:
    """Scores for one (strategy, group, seed) over the hidden cells it covers."""

    strategy: str
    group: str
    seed: int
    mae: float
    rmse: float
    pearson: float
    spearman: float
    n_points: int
    degenerate: bool = False

    def as_row(self) -> dict:
        return {
            "strategy": self.strategy, "group": self.group, "seed": self.seed, "mae": self.mae,
            "rmse": self.rmse, "pearson": self.pearson, "spearman": self.spearman,
            "n_points": self.n_points, "degenerate": self.degenerate,
        }


def score(pred, truth, strategy: str = "", group: str = "", seed: int = 0) -> MetricsReport:
    p, t = _pair(pred, truth)
    if p.size < 2:
        # a lone point still has an error; its correlation is undefined
        return MetricsReport(strategy, group, seed, mae(p, t), rmse(p, t), 0.0, 0.0, 1, True)
    pr = pearson(p, t)
    sp = spearman(p, t)
    return MetricsReport(
        strategy, group, seed, mae(p, t), rmse(p, t), pr.value, sp.value, int(p.size),
        pr.degenerate or sp.degenerate,
    )


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    n: int

    def format(self, digits: int = 2) -> str:
        return f"{self.mean:.{digits}f} ± {self.std:.{digits}f}"


def summarize(values: Sequence[float]) -> Summary:
    """Sample mean and n-1 standard deviation; needs at least two runs."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError(f"aggregation needs at least 2 runs, got {v.size}")
    mean = float(v.mean())
    if np.all(v == v[0]):
        return Summary(float(v[0]), 0.0, int(v.size))
    return Summary(mean, float(v.std(ddof=1)), int(v.size))


def aggregate(reports: Iterable[MetricsReport], metrics: Sequence[str] = METRICS) -> dict[tuple[str, str], dict[str, Summary]]:
    """Group by (strategy, group) and summarize each metric across seeds."""
    groups: dict[tuple[str, str], list[MetricsReport]] = {}
    for r in reports:
        groups.setdefault((r.strategy, r.group), []).append(r)
    out = {}
    for key in sorted(groups):
        runs = sorted(groups[key], key=lambda r: r.seed)
        out[key] = {m: summarize([getattr(r, m) for r in runs]) for m in metrics}
    return out


def intervals_disjoint(a: Summary, b: Summary) -> bool:
    """True when the mean ± std ranges do not touch."""
    return a.mean + a.std < b.mean - b.std or b.mean + b.std < a.mean - a.std
