"""Key/value memory of past lookback windows and their realized horizons."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import DataError, MultivariateSeries, window_arrays


@dataclass(frozen=True)
class MemoryEntry:
    key: np.ndarray  # (L, C)
    value: np.ndarray  # (H, C)
    t_end: int


@dataclass(frozen=True)
class Memory:
    """Stacked memory entries.

    ``keys`` and ``values`` are usually zero-copy window views over ``source``;
    when ``source`` is known the trajectory Gram matrix can be formed from the
    series directly instead of from N overlapping copies.
    """

    keys: np.ndarray  # (N, L, C)
    values: np.ndarray  # (N, H, C)
    t_end: np.ndarray  # (N,) global index of each key's last step
    source: MultivariateSeries | None = None

    def __post_init__(self):
        if self.keys.ndim != 3 or self.values.ndim != 3:
            raise DataError("memory keys/values must be 3-D (N, len, C)")
        n = self.keys.shape[0]
        if n == 0:
            raise DataError("memory is empty")
        if self.values.shape[0] != n or len(self.t_end) != n:
            raise DataError("keys, values and t_end disagree on N")
        if self.values.shape[2] != self.keys.shape[2]:
            raise DataError("keys and values disagree on C")

    @classmethod
    def from_series(
        cls, series: MultivariateSeries, lookback: int, horizon: int, stride: int = 1
    ) -> "Memory":
        x, y, t_end = window_arrays(series, lookback, horizon, stride)
        return cls(x, y, t_end, series)

    @classmethod
    def from_entries(cls, entries: Sequence[MemoryEntry]) -> "Memory":
        if len(entries) == 0:
            raise DataError("memory is empty")
        shapes = {(e.key.shape, e.value.shape) for e in entries}
        if len(shapes) != 1:
            raise DataError("memory entries must share L, H and C")
        return cls(
            np.stack([np.asarray(e.key, dtype=np.float64) for e in entries]),
            np.stack([np.asarray(e.value, dtype=np.float64) for e in entries]),
            np.array([e.t_end for e in entries], dtype=np.int64),
        )

    @property
    def n_entries(self) -> int:
        return self.keys.shape[0]

    @property
    def lookback(self) -> int:
        return self.keys.shape[1]

    @property
    def horizon(self) -> int:
        return self.values.shape[1]

    @property
    def n_channels(self) -> int:
        return self.keys.shape[2]

    def __len__(self) -> int:
        return self.n_entries

    def __getitem__(self, i: int) -> MemoryEntry:
        return MemoryEntry(self.keys[i], self.values[i], int(self.t_end[i]))

    def key_multiplicity(self) -> np.ndarray | None:
        """How many keys cover each row of ``source`` (None without a source)."""
        if self.source is None:
            return None
        local_end = self.t_end - self.source.start_index
        diff = np.zeros(self.source.n_steps + 1, dtype=np.int64)
        np.add.at(diff, local_end - self.lookback + 1, 1)
        np.add.at(diff, local_end + 1, -1)
        return np.cumsum(diff[:-1])


def as_memory(memory: Memory | Sequence[MemoryEntry]) -> Memory:
    return memory if isinstance(memory, Memory) else Memory.from_entries(memory)
