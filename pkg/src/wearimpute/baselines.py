"""Closed-form single-channel imputation strategies.

Every strategy takes a 1-D series and its observation mask and returns a
fully observed copy. Observed points are passed through untouched. Linear and
spline fills extend the nearest observed value across gaps that touch either
end of the series instead of extrapolating.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import make_interp_spline

from .frame import TimeSeriesFrame

KINDS = ("mean", "median", "mode", "nearest", "linear", "spline", "quadratic", "transformer")


def _prepare(series, observed=None):
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a 1-D series")
    obs = np.isfinite(x) if observed is None else np.asarray(observed, dtype=bool) & np.isfinite(x)
    if not obs.any():
        raise ValueError("series has no observed points")
    return x, obs


def _fill(x, obs, value_or_values):
    out = x.copy()
    out[~obs] = value_or_values if np.ndim(value_or_values) == 0 else value_or_values[~obs]
    return out


def impute_mean(series, observed=None) -> np.ndarray:
    x, obs = _prepare(series, observed)
    return _fill(x, obs, x[obs].mean())


def impute_median(series, observed=None) -> np.ndarray:
    x, obs = _prepare(series, observed)
    return _fill(x, obs, np.median(x[obs]))


def mode_value(values: np.ndarray, decimals: int = 6) -> float:
    """Most frequent value, counting values equal after rounding as one.

    Ties go to the smallest bin. The result is an observed value (the smallest
    in the winning bin), not the rounded bin key, so a repeated value such as
    a standardized zero is imputed exactly.
    """
    values = np.asarray(values, dtype=np.float64)
    keys = np.round(values, decimals)
    bins, counts = np.unique(keys, return_counts=True)
    best = bins[np.argmax(counts)]  # unique() sorts ascending, argmax takes the first max
    return float(values[keys == best].min())


def impute_mode(series, observed=None, decimals: int = 6) -> np.ndarray:
    x, obs = _prepare(series, observed)
    return _fill(x, obs, mode_value(x[obs], decimals))


def _nearest_index(obs: np.ndarray) -> np.ndarray:
    """Index of the nearest observed point for each position; ties pick the earlier."""
    n = obs.size
    idx = np.arange(n)
    prev = np.where(obs, idx, -1)
    prev = np.maximum.accumulate(prev)
    nxt = np.where(obs, idx, n)
    nxt = np.minimum.accumulate(nxt[::-1])[::-1]
    d_prev = np.where(prev >= 0, idx - prev, np.iinfo(np.int64).max)
    d_next = np.where(nxt < n, nxt - idx, np.iinfo(np.int64).max)
    return np.where(d_prev <= d_next, prev, nxt)


def impute_nearest(series, observed=None) -> np.ndarray:
    x, obs = _prepare(series, observed)
    return _fill(x, obs, x[_nearest_index(obs)])


def _interior(obs: np.ndarray) -> np.ndarray:
    """Positions from the first through the last observed point."""
    t = np.flatnonzero(obs)
    inner = np.zeros_like(obs)
    inner[t[0] : t[-1] + 1] = True
    return inner


def impute_linear(series, observed=None) -> np.ndarray:
    x, obs = _prepare(series, observed)
    t = np.arange(x.size)
    # np.interp holds the end values outside the anchor range: nearest-value extension
    filled = np.interp(t, t[obs], x[obs])
    return _fill(x, obs, filled)


def impute_spline(series, observed=None, order: int = 3) -> np.ndarray:
    """Interpolating spline through the observed points.

    Cubic uses not-a-knot end conditions, so polynomials up to degree 3 are
    reproduced exactly; order 2 gives the quadratic variant.
    """
    if order not in (2, 3):
        raise ValueError(f"spline order must be 2 or 3, got {order}")
    x, obs = _prepare(series, observed)
    t = np.flatnonzero(obs)
    if t.size < order + 1:
        raise ValueError(f"spline of order {order} needs at least {order + 1} observed points, got {t.size}")
    out = x.copy()
    missing = ~obs
    inner = missing & _interior(obs)
    if inner.any():
        spl = make_interp_spline(t.astype(float), x[t], k=order)
        out[inner] = spl(np.flatnonzero(inner).astype(float))
    edge = missing & ~inner
    if edge.any():
        out[edge] = x[_nearest_index(obs)][edge]
    return out


def impute_quadratic(series, observed=None) -> np.ndarray:
    return impute_spline(series, observed, order=2)


@dataclass(frozen=True)
class ImputerDescriptor:
    """A strategy name plus its parameters, e.g. ``spline:3`` or ``mode``."""

    kind: str
    params: dict = field(default_factory=dict, hash=False, compare=True)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown imputation strategy {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.kind == "spline":
            order = self.params.get("order", 3)
            if order not in (2, 3):
                raise ValueError(f"spline order must be 2 or 3, got {order}")
        elif self.kind == "quadratic":
            if self.params.get("order", 2) != 2:
                raise ValueError("quadratic strategy is fixed at order 2")
        elif self.kind == "mode":
            if set(self.params) - {"decimals"}:
                raise ValueError(f"mode accepts only 'decimals', got {sorted(self.params)}")
        elif self.params and self.kind != "transformer":
            raise ValueError(f"strategy {self.kind!r} takes no parameters")

    @classmethod
    def parse(cls, text: str) -> "ImputerDescriptor":
        kind, _, arg = text.strip().partition(":")
        kind = kind.strip().lower()
        if not arg:
            return cls(kind)
        if kind in ("spline", "quadratic"):
            return cls(kind, {"order": int(arg)})
        if kind == "mode":
            return cls(kind, {"decimals": int(arg)})
        if kind == "transformer":
            return cls(kind, {"checkpoint": arg})
        raise ValueError(f"strategy {kind!r} takes no parameters (got {text!r})")

    @property
    def label(self) -> str:
        if self.kind == "spline" and self.params.get("order", 3) != 3:
            return f"spline:{self.params['order']}"
        return self.kind

    def impute_series(self, series, observed=None) -> np.ndarray:
        if self.kind == "transformer":
            raise TypeError("the transformer strategy imputes whole frames; use the imputer module")
        if self.kind == "spline":
            return impute_spline(series, observed, self.params.get("order", 3))
        if self.kind == "mode":
            return impute_mode(series, observed, self.params.get("decimals", 6))
        return _SERIES_FUNCS[self.kind](series, observed)


_SERIES_FUNCS = {
    "mean": impute_mean,
    "median": impute_median,
    "mode": impute_mode,
    "nearest": impute_nearest,
    "linear": impute_linear,
    "quadratic": impute_quadratic,
}


def impute_frame(frame: TimeSeriesFrame, strategy) -> TimeSeriesFrame:
    """Fill every unobserved cell of ``frame`` channel by channel.

    Channels with no observed points at all are left missing.
    """
    desc = strategy if isinstance(strategy, ImputerDescriptor) else ImputerDescriptor.parse(strategy)
    values = frame.values.copy()
    observed = frame.observed.copy()
    for c in range(frame.n_channels):
        if observed[c].all() or not observed[c].any():
            continue
        values[c] = desc.impute_series(frame.values[c], frame.observed[c])
        observed[c] = True
    return frame.replace(values, observed)
