"""Dataset ingestion, chronological splits, z-scoring and sliding windows."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

STD_FLOOR = 1e-8


class DataError(ValueError):
    """Raised for malformed input files or impossible window/split requests."""


@dataclass(frozen=True)
class MultivariateSeries:
    values: np.ndarray  # (T, C) float64
    channel_names: tuple[str, ...]
    start_index: int = 0
    timestamps: tuple[str, ...] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DataError(f"values must be 2-D (T, C), got shape {values.shape}")
        if len(self.channel_names) != values.shape[1]:
            raise DataError("channel_names length does not match column count")
        if not np.all(np.isfinite(values)):
            raise DataError("series contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def segment(self, start: int, stop: int) -> "MultivariateSeries":
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return MultivariateSeries(
            self.values[start:stop], self.channel_names, self.start_index + start, ts
        )


@dataclass(frozen=True)
class WindowPair:
    x: np.ndarray  # (L, C)
    y: np.ndarray  # (H, C)
    t_end: int


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray

    def invert(self, series: MultivariateSeries) -> MultivariateSeries:
        return MultivariateSeries(
            series.values * self.std + self.mean,
            series.channel_names,
            series.start_index,
            series.timestamps,
        )


def load_csv(path: str | Path) -> MultivariateSeries:
    """Read a benchmark CSV: a ``date`` column followed by numeric channels."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"missing file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"empty file: {path}")
        if len(header) < 2:
            raise DataError(f"need a date column plus at least one channel, got {len(header)} columns")
        if header[0].strip().lower() != "date":
            raise DataError(f"first column must be 'date', got {header[0]!r}")
        rows: list[list[float]] = []
        stamps: list[str] = []
        for r, row in enumerate(reader):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"row {r} has {len(row)} cells, expected {len(header)}")
            parsed = []
            for c, cell in enumerate(row[1:]):
                try:
                    v = float(cell)
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise DataError(f"non-numeric cell at ({r}, {c + 1})")
                parsed.append(v)
            stamps.append(row[0])
            rows.append(parsed)
    if not rows:
        raise DataError(f"empty file: {path}")
    return MultivariateSeries(
        np.array(rows, dtype=np.float64),
        tuple(h.strip() for h in header[1:]),
        0,
        tuple(stamps),
    )


def split_chronological(
    series: MultivariateSeries,
    ratios: Sequence[float] = (0.7, 0.1, 0.2),
    min_length: int = 1,
) -> tuple[MultivariateSeries, MultivariateSeries, MultivariateSeries]:
    """Split into contiguous train/val/test segments.

    Train and test lengths are ``int(T * ratio)``; validation takes the
    remainder so the three segments always cover the series.
    ``min_length`` is normally ``L + H``.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DataError(f"ratios must be three positive numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"ratios must sum to 1, got {sum(ratios)}")
    T = series.n_steps
    n_train = int(T * ratios[0])
    n_test = int(T * ratios[2])
    n_val = T - n_train - n_test
    return _cut(series, (n_train, n_val, n_test), min_length)


def split_by_lengths(
    series: MultivariateSeries, lengths: Sequence[int], min_length: int = 1
) -> tuple[MultivariateSeries, MultivariateSeries, MultivariateSeries]:
    """Split with explicit row counts; trailing rows beyond their sum are dropped."""
    if sum(lengths) > series.n_steps:
        raise DataError(f"split lengths {tuple(lengths)} exceed series length {series.n_steps}")
    return _cut(series, lengths, min_length)


def ett_split(
    series: MultivariateSeries, rows_per_day: int, min_length: int = 1
) -> tuple[MultivariateSeries, MultivariateSeries, MultivariateSeries]:
    """12/4/4-month split of the ETT family (30-day months)."""
    month = 30 * rows_per_day
    return split_by_lengths(series, (12 * month, 4 * month, 4 * month), min_length)


def _cut(series, lengths, min_length):
    names = ("train", "val", "test")
    out = []
    start = 0
    for name, n in zip(names, lengths):
        if n < min_length:
            raise DataError(f"{name} segment has {n} rows, need at least {min_length}")
        out.append(series.segment(start, start + n))
        start += n
    return tuple(out)


def fit_stats(train: MultivariateSeries) -> ChannelStats:
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return ChannelStats(mean, std)


def apply_stats(stats: ChannelStats, series: MultivariateSeries) -> MultivariateSeries:
    return MultivariateSeries(
        (series.values - stats.mean) / stats.std,
        series.channel_names,
        series.start_index,
        series.timestamps,
    )


def with_context(
    previous: MultivariateSeries, segment: MultivariateSeries, lookback: int
) -> MultivariateSeries:
    """Prepend the last ``lookback`` rows of ``previous`` to ``segment``.

    Lets the first evaluation window of a split use history from the preceding
    split, as the standard benchmark loaders do. Targets stay inside ``segment``.
    """
    if previous.start_index + previous.n_steps != segment.start_index:
        raise DataError("segments are not adjacent")
    k = min(lookback, previous.n_steps)
    values = np.concatenate([previous.values[previous.n_steps - k :], segment.values])
    return MultivariateSeries(values, segment.channel_names, segment.start_index - k)


def window_ends(n_steps: int, lookback: int, horizon: int, stride: int = 1) -> np.ndarray:
    """Local indices of the last lookback step for every window."""
    if lookback < 1 or horizon < 1 or stride < 1:
        raise DataError("lookback, horizon and stride must be >= 1")
    if n_steps < lookback + horizon:
        raise DataError(
            f"series of length {n_steps} is shorter than lookback + horizon = {lookback + horizon}"
        )
    count = (n_steps - lookback - horizon) // stride + 1
    return lookback - 1 + stride * np.arange(count, dtype=np.int64)


def window_arrays(
    series: MultivariateSeries, lookback: int, horizon: int, stride: int = 1
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Zero-copy (N, L, C) lookback and (N, H, C) horizon views plus global t_end."""
    ends = window_ends(series.n_steps, lookback, horizon, stride)
    v = series.values
    lw = np.lib.stride_tricks.sliding_window_view(v, lookback, axis=0)  # (T-L+1, C, L)
    hw = np.lib.stride_tricks.sliding_window_view(v, horizon, axis=0)
    # basic slicing keeps these as views
    first, last = int(ends[0]), int(ends[-1])
    x = lw[first - lookback + 1 : last - lookback + 2 : stride].transpose(0, 2, 1)
    y = hw[first + 1 : last + 2 : stride].transpose(0, 2, 1)
    return x, y, ends + series.start_index


def sliding_windows(
    series: MultivariateSeries, lookback: int, horizon: int, stride: int = 1
) -> list[WindowPair]:
    x, y, t_end = window_arrays(series, lookback, horizon, stride)
    return [WindowPair(x[i], y[i], int(t_end[i])) for i in range(len(t_end))]
