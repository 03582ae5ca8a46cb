"""Two-stage channel-wise retrieval.

Each query channel scores only the keys of its candidate pool (itself plus its
relation-graph neighbours) by the real part of the normalized complex inner
product of truncated spectra, and keeps the top ``r`` keys. Ties go to the
lower source channel, then the lower memory entry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .graph import RelationGraph
from .spectral import KnowledgeBase, SpectralKey, spectrum_norm, truncated_rfft

EPS = 1e-8


@dataclass(frozen=True)
class RetrievedReference:
    value: np.ndarray  # (H,)
    score: float
    source_channel: int
    source_entry: int


@dataclass(frozen=True)
class QuerySpectrum:
    spectrum: np.ndarray  # complex (F,)
    norm: float

    @classmethod
    def from_window(cls, x: np.ndarray, f: int) -> "QuerySpectrum":
        spec = truncated_rfft(x, f)
        return cls(spec, float(spectrum_norm(spec.real, spec.imag)))


@dataclass
class OpCounter:
    """Similarity evaluations per query channel (keys actually scored)."""

    similarity_evals: int = 0
    pool_sizes: list[int] = field(default_factory=list)
    queries: int = 0

    def add(self, evals_per_channel) -> None:
        evals = [int(e) for e in evals_per_channel]
        self.pool_sizes.extend(evals)
        self.similarity_evals += sum(evals)
        self.queries += 1

    def merge(self, other: "OpCounter") -> None:
        self.similarity_evals += other.similarity_evals
        self.pool_sizes.extend(other.pool_sizes)
        self.queries += other.queries


def spectral_similarity(q: QuerySpectrum, k: SpectralKey, eps: float = EPS) -> float:
    qs = np.asarray(q.spectrum)
    ks = np.asarray(k.spectrum)
    if qs.shape != ks.shape:
        raise ValueError(f"spectrum length mismatch: {qs.shape} vs {ks.shape}")
    # left-to-right accumulation, same rounding as the batch kernel
    acc = np.cumsum(qs.real * ks.real + qs.imag * ks.imag)[-1]
    return float(acc / (q.norm * k.norm + eps))


def candidate_pool(graph: RelationGraph, c: int) -> list[int]:
    pool = [c]
    for j in graph.ids[c]:
        j = int(j)
        if j not in pool:
            pool.append(j)
    return pool


def pool_matrix(graph: RelationGraph, channels) -> np.ndarray:
    """Candidate pools for ``channels`` as a (Q, M+1) array padded with -1."""
    pools = [candidate_pool(graph, int(c)) for c in channels]
    width = max(len(p) for p in pools)
    out = np.full((len(pools), width), -1, dtype=np.int64)
    for i, p in enumerate(pools):
        out[i, : len(p)] = p
    return out


@dataclass(frozen=True)
class RetrievalBatch:
    channels: np.ndarray  # (B, Q, r) source channel, -1 when unfilled
    entries: np.ndarray  # (B, Q, r) source entry, -1 when unfilled
    scores: np.ndarray  # (B, Q, r), nan when unfilled
    values: np.ndarray  # (B, Q, r, H), zeros when unfilled
    counts: np.ndarray  # (B, Q) references found
    evals: np.ndarray  # (B, Q) similarity evaluations

    def references(self, b: int) -> list[list[RetrievedReference]]:
        out = []
        for q in range(self.channels.shape[1]):
            out.append(
                [
                    RetrievedReference(
                        self.values[b, q, i],
                        float(self.scores[b, q, i]),
                        int(self.channels[b, q, i]),
                        int(self.entries[b, q, i]),
                    )
                    for i in range(int(self.counts[b, q]))
                ]
            )
        return out

    def counter(self) -> OpCounter:
        oc = OpCounter()
        for row in self.evals:
            oc.add(row)
        return oc


def query_spectra(kb: KnowledgeBase, x: np.ndarray):
    """Truncated spectra of a (B, L, Q) batch as contiguous (B, Q, F) parts plus norms."""
    spec = truncated_rfft(x, kb.config.freq_cutoff, axis=1).transpose(0, 2, 1)
    re = np.ascontiguousarray(spec.real)
    im = np.ascontiguousarray(spec.imag)
    return re, im, np.ascontiguousarray(spectrum_norm(re, im))


def _exclusion_array(exclude, batch: int) -> np.ndarray:
    if exclude is None:
        out = np.empty((batch, 2), dtype=np.int64)
        out[:, 0], out[:, 1] = 1, 0  # lo > hi: nothing excluded
        return out
    out = np.ascontiguousarray(np.asarray(exclude, dtype=np.int64).reshape(batch, 2))
    return out


def retrieve_batch(
    kb: KnowledgeBase,
    x: np.ndarray,
    r: int,
    exclude=None,
    channels=None,
    threads: int = 1,
    backend: str | None = None,
) -> RetrievalBatch:
    """Retrieve for a batch of lookback windows.

    ``x`` is (B, L, Q) where column ``q`` is a window of channel
    ``channels[q]`` (all channels by default). ``exclude`` is None or a
    (B, 2) array of inclusive global time intervals; memory entries whose
    key+value span intersects the interval are skipped.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError("x must be (B, L, Q)")
    if r < 1:
        raise ValueError("r must be >= 1")
    cfg = kb.config
    if x.shape[1] != cfg.lookback:
        raise ValueError(f"window length {x.shape[1]} != knowledge base lookback {cfg.lookback}")
    if channels is None:
        channels = np.arange(cfg.n_channels)
    channels = np.asarray(channels, dtype=np.int64)
    if x.shape[2] != len(channels):
        raise ValueError("x column count does not match channels")
    if np.any((channels < 0) | (channels >= cfg.n_channels)):
        raise IndexError("channel out of range")
    B = x.shape[0]
    q_re, q_im, q_norm = query_spectra(kb, x)
    score = kernels.BACKENDS[backend] if backend else kernels.score_topk
    ch, en, sc, evals = score(
        q_re, q_im, q_norm,
        kb.keys_re, kb.keys_im, kb.norms,
        pool_matrix(kb.graph, channels),
        np.ascontiguousarray(kb.t_end, dtype=np.int64),
        _exclusion_array(exclude, B),
        cfg.lookback, cfg.horizon, r, EPS, threads,
    )
    filled = ch >= 0
    values = np.where(
        filled[..., None], kb.values[np.maximum(ch, 0), np.maximum(en, 0)], 0.0
    )
    return RetrievalBatch(ch, en, sc, values, filled.sum(axis=-1), evals)


def retrieve_channel(
    kb: KnowledgeBase,
    x_c: np.ndarray,
    c: int,
    r: int,
    exclude: tuple[int, int] | None = None,
    counter: OpCounter | None = None,
) -> list[RetrievedReference]:
    x_c = np.asarray(x_c, dtype=np.float64)
    if x_c.shape != (kb.config.lookback,):
        raise ValueError(f"query must have length {kb.config.lookback}")
    excl = None if exclude is None else [exclude]
    res = retrieve_batch(kb, x_c[None, :, None], r, excl, channels=[c])
    if counter is not None:
        counter.add(res.evals[0])
    return res.references(0)[0]


def retrieve_all(
    kb: KnowledgeBase,
    x: np.ndarray,
    r: int,
    exclude: tuple[int, int] | None = None,
    counter: OpCounter | None = None,
) -> list[list[RetrievedReference]]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != kb.config.n_channels:
        raise ValueError(f"x must be (L, {kb.config.n_channels})")
    excl = None if exclude is None else [exclude]
    res = retrieve_batch(kb, x[None], r, excl)
    if counter is not None:
        counter.add(res.evals[0])
    return res.references(0)


def retrieve_agnostic(kb: KnowledgeBase, x: np.ndarray) -> RetrievedReference:
    """Channel-agnostic baseline: one key for every channel.

    Scores every key of every channel against every query channel and returns
    the single key with the highest summed score, to be shared by all
    channels. Used to contrast against channel-wise retrieval.
    """
    q_re, q_im, q_norm = query_spectra(kb, np.asarray(x, dtype=np.float64)[None])
    C, N, F = kb.keys_re.shape
    kr = kb.keys_re.reshape(C * N, F)
    ki = kb.keys_im.reshape(C * N, F)
    dots = q_re[0] @ kr.T + q_im[0] @ ki.T  # (Q, C*N)
    scores = dots / (q_norm[0][:, None] * kb.norms.reshape(-1)[None, :] + EPS)
    total = scores.sum(axis=0)
    best = int(np.argmax(total))  # argmax keeps the first (lowest channel, entry) on ties
    j, m = divmod(best, N)
    return RetrievedReference(kb.values[j, m], float(total[best] / scores.shape[0]), j, m)
