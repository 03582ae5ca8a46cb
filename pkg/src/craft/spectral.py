"""Channel-wise knowledge base of truncated key spectra and value horizons.

File layout (little-endian)::

    b"CRKB" | u32 version | u32 L, H, F, C, N
    u32 M | u32 ids[C*M] | f64 scores[C*M]           relation graph
    i64 t_end[N]                                     memory time index
    per channel: f64 spectra[N*F*2] (re, im interleaved) | f64 norms[N] | f64 values[N*H]
    u32 crc32 of everything above
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .graph import RelationGraph
from .memory import Memory, MemoryEntry, as_memory

MAGIC = b"CRKB"
VERSION = 1


class KBFormatError(ValueError):
    pass


def max_bins(lookback: int) -> int:
    return lookback // 2 + 1


def default_freq_cutoff(lookback: int) -> int:
    """Keep roughly 5% of the real-FFT bins; 36 for a 720-step lookback."""
    if lookback == 720:
        return 36
    return max(1, round(0.05 * max_bins(lookback)))


def truncated_rfft(x: np.ndarray, f: int, axis: int = -1) -> np.ndarray:
    """First ``f`` bins (DC included) of the unnormalized forward real FFT."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[axis]
    if not 1 <= f <= max_bins(n):
        raise ValueError(f"frequency cutoff {f} outside [1, {max_bins(n)}] for length {n}")
    spec = np.fft.rfft(x, axis=axis)
    return np.take(spec, np.arange(f), axis=axis)


def spectrum_norm(re: np.ndarray, im: np.ndarray) -> np.ndarray:
    """L2 norm over the last axis of a spectrum given as real/imag parts."""
    return np.sqrt(np.sum(re * re + im * im, axis=-1))


def retained_energy(x: np.ndarray, f: int) -> float:
    """Fraction of signal energy (Parseval-weighted) kept by the first ``f`` bins."""
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    spec = np.fft.rfft(x)
    w = np.full(len(spec), 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    total = n * float(x @ x)
    if total == 0.0:
        return 1.0
    return float(np.sum(w[:f] * np.abs(spec[:f]) ** 2) / total)


@dataclass(frozen=True)
class SpectralKey:
    spectrum: np.ndarray  # complex (F,)
    norm: float
    entry_id: int
    channel_id: int


@dataclass(frozen=True)
class KBConfig:
    lookback: int
    horizon: int
    freq_cutoff: int
    n_channels: int
    n_entries: int

    def as_tuple(self) -> tuple[int, int, int, int, int]:
        return (self.lookback, self.horizon, self.freq_cutoff, self.n_channels, self.n_entries)


@dataclass(frozen=True)
class KnowledgeBase:
    """Per-channel key spectra, their norms and paired value horizons.

    Arrays are channel-major so that ``keys_re[c, i]`` and ``values[c, i]``
    both come from memory entry ``i`` of channel ``c``.
    """

    keys_re: np.ndarray  # (C, N, F)
    keys_im: np.ndarray  # (C, N, F)
    norms: np.ndarray  # (C, N)
    values: np.ndarray  # (C, N, H)
    t_end: np.ndarray  # (N,) int64
    graph: RelationGraph
    config: KBConfig

    def key(self, channel: int, entry: int) -> SpectralKey:
        spec = self.keys_re[channel, entry] + 1j * self.keys_im[channel, entry]
        return SpectralKey(spec, float(self.norms[channel, entry]), entry, channel)

    def keys(self, channel: int) -> list[SpectralKey]:
        return [self.key(channel, i) for i in range(self.config.n_entries)]

    def with_graph(self, graph: RelationGraph) -> "KnowledgeBase":
        if graph.channel_count != self.config.n_channels:
            raise ValueError("graph channel count does not match knowledge base")
        return KnowledgeBase(
            self.keys_re, self.keys_im, self.norms, self.values, self.t_end, graph, self.config
        )

    def equals(self, other: "KnowledgeBase") -> bool:
        """Bit-exact structural equality."""
        arrays = ("keys_re", "keys_im", "norms", "values", "t_end")
        return (
            self.config == other.config
            and all(
                getattr(self, a).dtype == getattr(other, a).dtype
                and np.array_equal(getattr(self, a), getattr(other, a))
                for a in arrays
            )
            and np.array_equal(self.graph.ids, other.graph.ids)
            and self.graph.scores.tobytes() == other.graph.scores.tobytes()
        )


def build_knowledge_base(
    memory: Memory | Sequence[MemoryEntry], graph: RelationGraph, f: int
) -> KnowledgeBase:
    mem = as_memory(memory)
    if graph.channel_count != mem.n_channels:
        raise ValueError("graph channel count does not match memory")
    spec = truncated_rfft(mem.keys, f, axis=1)  # (N, F, C)
    spec = spec.transpose(2, 0, 1)  # (C, N, F)
    re = np.ascontiguousarray(spec.real)
    im = np.ascontiguousarray(spec.imag)
    values = np.ascontiguousarray(mem.values.transpose(2, 0, 1), dtype=np.float64)
    config = KBConfig(mem.lookback, mem.horizon, f, mem.n_channels, mem.n_entries)
    return KnowledgeBase(
        re, im, spectrum_norm(re, im), values, np.asarray(mem.t_end, dtype=np.int64).copy(), graph, config
    )


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    cfg = kb.config
    parts = [MAGIC, struct.pack("<I", VERSION), struct.pack("<5I", *cfg.as_tuple())]
    parts.append(struct.pack("<I", kb.graph.m))
    parts.append(kb.graph.ids.astype("<u4").tobytes())
    parts.append(kb.graph.scores.astype("<f8").tobytes())
    parts.append(kb.t_end.astype("<i8").tobytes())
    for c in range(cfg.n_channels):
        inter = np.stack([kb.keys_re[c], kb.keys_im[c]], axis=-1)
        parts.append(inter.astype("<f8").tobytes())
        parts.append(kb.norms[c].astype("<f8").tobytes())
        parts.append(kb.values[c].astype("<f8").tobytes())
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_kb(path: str | Path, expect: Mapping[str, int] | None = None) -> KnowledgeBase:
    """Read a knowledge base file.

    ``expect`` maps config field names (``lookback``, ``freq_cutoff``, ...) to
    required values; any difference raises ``KBFormatError('config mismatch ...')``.
    """
    blob = Path(path).read_bytes()
    if len(blob) < 4 + 4 + 20 + 4 + 4:
        raise KBFormatError("truncated file")
    if blob[:4] != MAGIC:
        raise KBFormatError("bad magic bytes")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise KBFormatError("checksum failure")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != VERSION:
        raise KBFormatError(f"version mismatch: file {version}, supported {VERSION}")
    L, H, F, C, N = struct.unpack_from("<5I", body, 8)
    config = KBConfig(L, H, F, C, N)
    if expect:
        for name, want in expect.items():
            got = getattr(config, name)
            if got != want:
                raise KBFormatError(f"config mismatch: {name}={got} in file, expected {want}")
    (M,) = struct.unpack_from("<I", body, 28)
    need = 32 + C * M * 12 + N * 8 + C * N * (2 * F + 1 + H) * 8
    if len(body) != need:
        raise KBFormatError(f"truncated file: {len(body)} body bytes, expected {need}")
    off = 32

    def take(dtype, count, shape):
        nonlocal off
        arr = np.frombuffer(body, dtype=dtype, count=count, offset=off)
        off += arr.nbytes
        return arr.reshape(shape).astype(dtype.lstrip("<"))

    ids = take("<u4", C * M, (C, M)).astype(np.int64)
    scores = take("<f8", C * M, (C, M))
    t_end = take("<i8", N, (N,))
    re = np.empty((C, N, F))
    im = np.empty((C, N, F))
    norms = np.empty((C, N))
    values = np.empty((C, N, H))
    for c in range(C):
        inter = take("<f8", N * F * 2, (N, F, 2))
        re[c], im[c] = inter[..., 0], inter[..., 1]
        norms[c] = take("<f8", N, (N,))
        values[c] = take("<f8", N * H, (N, H))
    return KnowledgeBase(re, im, norms, values, t_end, RelationGraph(ids, scores), config)
