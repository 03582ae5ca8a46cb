"""Sparse inter-channel relation graph from concatenated memory trajectories."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .memory import Memory, MemoryEntry, as_memory

log = logging.getLogger(__name__)

ZERO_NORM = 1e-12


@dataclass(frozen=True)
class ChannelTrajectory:
    z: np.ndarray  # (N * L,)
    channel_id: int


@dataclass(frozen=True)
class RelationGraph:
    """Top-M neighbours per channel, sorted by similarity descending.

    ``ids[c]`` / ``scores[c]`` hold the neighbours of channel ``c``; a channel
    never lists itself.
    """

    ids: np.ndarray  # (C, M) int64
    scores: np.ndarray  # (C, M) float64

    @property
    def channel_count(self) -> int:
        return self.ids.shape[0]

    @property
    def m(self) -> int:
        return self.ids.shape[1]

    def neighbors(self, c: int) -> list[tuple[int, float]]:
        return [(int(j), float(s)) for j, s in zip(self.ids[c], self.scores[c])]

    def truncate(self, m: int) -> "RelationGraph":
        """Graph keeping only each channel's first ``m`` neighbours."""
        if m < 1:
            raise ValueError("m must be >= 1")
        m = min(m, self.m)
        return RelationGraph(self.ids[:, :m].copy(), self.scores[:, :m].copy())

    def adjacency_text(self, names: Sequence[str] | None = None) -> str:
        label = (lambda c: names[c]) if names else str
        lines = []
        for c in range(self.channel_count):
            nb = ", ".join(f"{label(j)} ({s:+.4f})" for j, s in self.neighbors(c))
            lines.append(f"{label(c)}: {nb}")
        return "\n".join(lines)


def concat_trajectory(memory: Memory | Sequence[MemoryEntry], channel: int) -> ChannelTrajectory:
    mem = as_memory(memory)
    if not 0 <= channel < mem.n_channels:
        raise IndexError(f"channel {channel} out of range for C={mem.n_channels}")
    return ChannelTrajectory(np.ascontiguousarray(mem.keys[:, :, channel]).reshape(-1), channel)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na = np.sqrt(a @ a)
    nb = np.sqrt(b @ b)
    if na < ZERO_NORM or nb < ZERO_NORM:
        return 0.0
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def trajectory_gram(memory: Memory | Sequence[MemoryEntry]) -> np.ndarray:
    """Inner products ``z_i . z_j`` for all channel pairs, shape (C, C).

    Memory built over a series uses the per-row key multiplicity, which gives
    the same sums as concatenating all N overlapping windows.
    """
    mem = as_memory(memory)
    w = mem.key_multiplicity()
    if w is not None:
        s = mem.source.values
        return s.T @ (s * w[:, None].astype(np.float64))
    return np.einsum("nlc,nld->cd", mem.keys, mem.keys, optimize=True)


def similarity_matrix(memory: Memory | Sequence[MemoryEntry]) -> np.ndarray:
    """Symmetric cosine similarities; each unordered pair is computed once."""
    gram = trajectory_gram(memory)
    C = gram.shape[0]
    norms = np.sqrt(np.clip(np.diag(gram), 0.0, None))
    sim = np.eye(C)
    for i in range(C):
        for j in range(i + 1, C):
            if norms[i] < ZERO_NORM or norms[j] < ZERO_NORM:
                s = 0.0
            else:
                s = min(1.0, max(-1.0, gram[i, j] / (norms[i] * norms[j])))
            sim[i, j] = sim[j, i] = s
    return sim


def graph_from_similarity(sim: np.ndarray, m: int) -> RelationGraph:
    C = sim.shape[0]
    if C < 2:
        raise ValueError("relation graph needs at least 2 channels")
    if m < 1:
        raise ValueError("m must be >= 1")
    if m >= C:
        log.warning("m=%d >= C=%d; clamping to %d neighbours", m, C, C - 1)
        m = C - 1
    ids = np.empty((C, m), dtype=np.int64)
    scores = np.empty((C, m))
    others = np.arange(C)
    for i in range(C):
        cand = others[others != i]
        # lexsort: last key is primary -> similarity desc, then channel id asc
        order = np.lexsort((cand, -sim[i, cand]))[:m]
        ids[i] = cand[order]
        scores[i] = sim[i, cand[order]]
    return RelationGraph(ids, scores)


def build_graph(memory: Memory | Sequence[MemoryEntry], m: int) -> RelationGraph:
    return graph_from_similarity(similarity_matrix(memory), m)
