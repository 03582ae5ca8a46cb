"""Direct MLP forecaster, retrieval head and additive fusion.

Both branches offset-normalize their input by its last value and add it back
to the output. The MLP and the head are shared across channels and applied to
each channel independently.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .retrieval import RetrievedReference, retrieve_batch
from .spectral import KnowledgeBase

MAGIC = b"CRMD"
VERSION = 1
PARAM_NAMES = ("mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2", "head_w", "head_b")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class CraftModel:
    mlp_w1: np.ndarray  # (L, D_h)
    mlp_b1: np.ndarray  # (D_h,)
    mlp_w2: np.ndarray  # (D_h, H)
    mlp_b2: np.ndarray  # (H,)
    head_w: np.ndarray  # (H, H)
    head_b: np.ndarray  # (H,)
    alpha: float = 0.001

    def __post_init__(self):
        L, D = self.mlp_w1.shape
        H = self.mlp_w2.shape[1]
        expected = {
            "mlp_b1": (D,), "mlp_w2": (D, H), "mlp_b2": (H,), "head_w": (H, H), "head_b": (H,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if not self.alpha >= 0:
            raise ValueError("alpha must be >= 0")

    @property
    def lookback(self) -> int:
        return self.mlp_w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.mlp_w1.shape[1]

    @property
    def horizon(self) -> int:
        return self.mlp_w2.shape[1]

    @classmethod
    def init(
        cls, lookback: int, horizon: int, hidden: int = 512, alpha: float = 0.001, seed: int = 0
    ) -> "CraftModel":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every tensor."""
        rng = np.random.default_rng(seed)

        def u(fan_in, shape):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        return cls(
            u(lookback, (lookback, hidden)), u(lookback, (hidden,)),
            u(hidden, (hidden, horizon)), u(hidden, (horizon,)),
            u(horizon, (horizon, horizon)), u(horizon, (horizon,)),
            alpha,
        )

    def params(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in PARAM_NAMES}

    def with_params(self, params: dict[str, np.ndarray]) -> "CraftModel":
        return replace(self, **params)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params().values())


@dataclass(frozen=True)
class ForecastOutput:
    fused: np.ndarray  # (H, C) or (B, H, C)
    direct: np.ndarray
    retrieval: np.ndarray
    refs_used: np.ndarray  # (C,) or (B, C)


def _check_batch(model: CraftModel, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != model.lookback:
        raise ValueError(f"expected (L={model.lookback}, C) input, got {x.shape}")
    return x, single


def direct_forward(model: CraftModel, x: np.ndarray):
    """Batched direct branch; returns (B, H, C) and the activations for backprop."""
    B, L, C = x.shape
    last = x[:, -1, :]  # (B, C)
    u = (x - last[:, None, :]).transpose(0, 2, 1).reshape(B * C, L)
    pre = u @ model.mlp_w1 + model.mlp_b1
    act = np.maximum(pre, 0.0)
    out = act @ model.mlp_w2 + model.mlp_b2
    out = out.reshape(B, C, -1) + last[:, :, None]
    return out.transpose(0, 2, 1), (u, pre, act)


def retrieval_forward(model: CraftModel, values: np.ndarray, counts: np.ndarray):
    """Batched retrieval head over (B, C, r, H) references with (B, C) valid counts.

    Returns (B, H, C); channels without references get a zero column.
    """
    B, C, r, H = values.shape
    if H != model.horizon:
        raise ValueError(f"reference length {H} != horizon {model.horizon}")
    last = values[..., -1:]
    v = values - last
    proj = v @ model.head_w + model.head_b + last
    mask = (np.arange(r)[None, None, :] < counts[:, :, None]).astype(np.float64)
    denom = np.maximum(counts, 1).astype(np.float64)
    out = (proj * mask[..., None]).sum(axis=2) / denom[..., None]
    return out.transpose(0, 2, 1), (v, mask, denom)


def fuse(direct: np.ndarray, retrieval: np.ndarray, alpha: float) -> np.ndarray:
    direct = np.asarray(direct)
    retrieval = np.asarray(retrieval)
    if direct.shape != retrieval.shape:
        raise ValueError(f"shape mismatch: {direct.shape} vs {retrieval.shape}")
    return direct + alpha * retrieval


def direct_forecast(model: CraftModel, x: np.ndarray) -> np.ndarray:
    xb, single = _check_batch(model, x)
    out, _ = direct_forward(model, xb)
    return out[0] if single else out


def retrieval_forecast(
    model: CraftModel, refs: Sequence[Sequence[RetrievedReference]]
) -> np.ndarray:
    """(H, C) retrieval forecast from per-channel reference lists."""
    C = len(refs)
    H = model.horizon
    r = max([len(lst) for lst in refs] + [1])
    values = np.zeros((1, C, r, H))
    counts = np.zeros((1, C), dtype=np.int64)
    for c, lst in enumerate(refs):
        for i, ref in enumerate(lst):
            v = np.asarray(ref.value, dtype=np.float64)
            if v.shape != (H,):
                raise ValueError(f"reference length {v.shape} != horizon {H}")
            values[0, c, i] = v
        counts[0, c] = len(lst)
    out, _ = retrieval_forward(model, values, counts)
    return out[0]


def forecast_batch(
    model: CraftModel, kb: KnowledgeBase, x: np.ndarray, r: int, exclude=None, threads: int = 1
):
    """Fused forecast for a (B, L, C) batch; also returns the retrieval result."""
    x, _ = _check_batch(model, x)
    if kb.config.horizon != model.horizon or kb.config.lookback != model.lookback:
        raise ValueError("knowledge base and model disagree on lookback/horizon")
    res = retrieve_batch(kb, x, r, exclude, threads=threads)
    direct, _ = direct_forward(model, x)
    retr, _ = retrieval_forward(model, res.values, res.counts)
    return ForecastOutput(fuse(direct, retr, model.alpha), direct, retr, res.counts), res


def forecast(model: CraftModel, kb: KnowledgeBase, x: np.ndarray, r: int) -> ForecastOutput:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("forecast expects a single (L, C) window")
    out, _ = forecast_batch(model, kb, x[None], r)
    return ForecastOutput(out.fused[0], out.direct[0], out.retrieval[0], out.refs_used[0])


def save_checkpoint(model: CraftModel, path: str | Path) -> None:
    parts = [
        MAGIC,
        struct.pack("<I", VERSION),
        struct.pack("<3I", model.lookback, model.horizon, model.hidden),
        struct.pack("<d", model.alpha),
    ]
    parts += [getattr(model, n).astype("<f8").tobytes() for n in PARAM_NAMES]
    body = b"".join(parts)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def load_checkpoint(path: str | Path) -> CraftModel:
    blob = Path(path).read_bytes()
    if len(blob) < 32:
        raise CheckpointError("truncated file")
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic bytes")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError("checksum failure")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != VERSION:
        raise CheckpointError(f"version mismatch: file {version}, supported {VERSION}")
    L, H, D = struct.unpack_from("<3I", body, 8)
    (alpha,) = struct.unpack_from("<d", body, 20)
    shapes = [(L, D), (D,), (D, H), (H,), (H, H), (H,)]
    need = 28 + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(body) != need:
        raise CheckpointError(f"truncated file: {len(body)} body bytes, expected {need}")
    off = 28
    params = {}
    for name, shape in zip(PARAM_NAMES, shapes):
        n = int(np.prod(shape))
        params[name] = np.frombuffer(body, "<f8", n, off).reshape(shape).astype(np.float64)
        off += 8 * n
    return CraftModel(alpha=alpha, **params)


def models_equal(a: CraftModel, b: CraftModel) -> bool:
    return a.alpha == b.alpha and all(
        getattr(a, f.name).tobytes() == getattr(b, f.name).tobytes()
        for f in fields(a)
        if f.name in PARAM_NAMES
    )
