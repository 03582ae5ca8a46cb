"""Joint training of the direct MLP and the retrieval head with Adam."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import MultivariateSeries, window_arrays
from .model import CraftModel, direct_forward, fuse, retrieval_forward
from .retrieval import RetrievalBatch, retrieve_batch
from .spectral import KnowledgeBase

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 10
    patience: int = 3
    seed: int = 0
    alpha: float = 0.001
    r: int = 1
    hidden: int = 512
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    freeze_head: bool = False
    cache_retrieval: bool = False
    debug: bool = False
    threads: int = 1

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epochs < 0 or self.patience < 1 or self.r < 1:
            raise ValueError("epochs >= 0, patience >= 1 and r >= 1 required")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            {k: np.zeros_like(p) for k, p in params.items()},
            {k: np.zeros_like(p) for k, p in params.items()},
        )


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


@dataclass
class ForwardCache:
    x: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    direct_acts: tuple
    head_acts: tuple
    fused: np.ndarray


def forward(model: CraftModel, x: np.ndarray, values: np.ndarray, counts: np.ndarray):
    """Fused (B, H, C) forecast for given references, with cached activations."""
    direct, d_acts = direct_forward(model, x)
    retr, h_acts = retrieval_forward(model, values, counts)
    fused = fuse(direct, retr, model.alpha)
    return fused, ForwardCache(x, values, counts, d_acts, h_acts, fused)


def backward(model: CraftModel, cache: ForwardCache, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Batch-mean MSE and its exact gradients w.r.t. all parameters.

    Reference selection is treated as constant.
    """
    diff = cache.fused - y
    loss = float(np.mean(diff**2))
    if not np.isfinite(loss):
        raise TrainingError("non-finite loss")
    B, H, C = diff.shape
    g = (2.0 / diff.size) * diff.transpose(0, 2, 1)  # (B, C, H)

    u, pre, act = cache.direct_acts
    d_out = g.reshape(B * C, H)
    grads = {
        "mlp_w2": act.T @ d_out,
        "mlp_b2": d_out.sum(axis=0),
    }
    d_pre = (d_out @ model.mlp_w2.T) * (pre > 0)
    grads["mlp_w1"] = u.T @ d_pre
    grads["mlp_b1"] = d_pre.sum(axis=0)

    v, mask, denom = cache.head_acts
    d_proj = (model.alpha * g / denom[..., None])[:, :, None, :] * mask[..., None]  # (B, C, r, H)
    flat_v = v.reshape(-1, H)
    flat_d = d_proj.reshape(-1, H)
    grads["head_w"] = flat_v.T @ flat_d
    grads["head_b"] = flat_d.sum(axis=0)
    return loss, grads


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """Bias-corrected Adam update; returns new parameter arrays and state."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {k}")
    b1, b2 = config.adam_beta1, config.adam_beta2
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            new_params[k], new_m[k], new_v[k] = p, state.m[k], state.v[k]
            continue
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * (g * g)
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params[k] = p - config.lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        new_m[k], new_v[k] = m, v
    return new_params, AdamState(new_m, new_v, t)


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    seconds: float


@dataclass
class TrainLog:
    epochs: list[EpochRecord] = field(default_factory=list)
    initial_train_mse: float = float("nan")
    final_train_mse: float = float("nan")
    initial_val_mse: float = float("nan")
    best_epoch: int = 0
    best_val_mse: float = float("inf")
    stopped_early: bool = False
    diverged: bool = False

    def to_text(self) -> str:
        lines = ["epoch\ttrain_mse\tval_mse\tseconds"]
        lines.append(f"0\t{self.initial_train_mse:.8f}\t{self.initial_val_mse:.8f}\t0.000")
        for e in self.epochs:
            lines.append(f"{e.epoch}\t{e.train_mse:.8f}\t{e.val_mse:.8f}\t{e.seconds:.3f}")
        lines.append(
            f"# best_epoch={self.best_epoch} best_val_mse={self.best_val_mse:.8f} "
            f"final_train_mse={self.final_train_mse:.8f} "
            f"stopped_early={self.stopped_early} diverged={self.diverged}"
        )
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())


def exclusion_intervals(t_end: np.ndarray, lookback: int, horizon: int) -> np.ndarray:
    """Inclusive [t-L+1, t+H] span of each training query."""
    t_end = np.asarray(t_end, dtype=np.int64)
    return np.stack([t_end - lookback + 1, t_end + horizon], axis=1)


def check_no_leakage(res: RetrievalBatch, kb: KnowledgeBase, exclude: np.ndarray) -> None:
    L, H = kb.config.lookback, kb.config.horizon
    ent = res.entries
    filled = ent >= 0
    t = kb.t_end[np.maximum(ent, 0)]
    lo = exclude[:, 0][:, None, None]
    hi = exclude[:, 1][:, None, None]
    overlap = filled & (t - L + 1 <= hi) & (t + H >= lo)
    if overlap.any():
        raise TrainingError("retrieved reference overlaps its training query")


def evaluate_mse(
    model: CraftModel,
    kb: KnowledgeBase,
    x: np.ndarray,
    y: np.ndarray,
    r: int,
    batch_size: int = 256,
    exclude: np.ndarray | None = None,
    threads: int = 1,
) -> float:
    """Mean fused MSE over all windows (windows x horizon x channels)."""
    total = 0.0
    count = 0
    for start in range(0, len(x), batch_size):
        sl = slice(start, start + batch_size)
        xb = np.asarray(x[sl])
        excl = None if exclude is None else exclude[sl]
        res = retrieve_batch(kb, xb, r, excl, threads=threads)
        fused, _ = forward(model, xb, res.values, res.counts)
        err = fused - np.asarray(y[sl])
        total += float(np.sum(err * err))
        count += err.size
    return total / count


def train(
    train_series: MultivariateSeries,
    val_series: MultivariateSeries,
    kb: KnowledgeBase,
    config: TrainConfig,
    model: CraftModel | None = None,
) -> tuple[CraftModel, TrainLog]:
    """Train on dense windows of ``train_series``, early-stop on ``val_series``.

    ``kb`` must be built from the same standardized training data. Returns
    the best-validation model.
    """
    L, H = kb.config.lookback, kb.config.horizon
    if model is None:
        model = CraftModel.init(L, H, config.hidden, config.alpha, config.seed)
    if model.lookback != L or model.horizon != H:
        raise ValueError("model and knowledge base disagree on lookback/horizon")
    x_tr, y_tr, t_tr = window_arrays(train_series, L, H)
    x_va, y_va, _ = window_arrays(val_series, L, H)
    excl_tr = exclusion_intervals(t_tr, L, H)
    rng = np.random.default_rng(config.seed)
    bs = config.batch_size

    cached = None
    if config.cache_retrieval:
        cached = [
            retrieve_batch(kb, x_tr[s : s + 256], config.r, excl_tr[s : s + 256], threads=config.threads)
            for s in range(0, len(x_tr), 256)
        ]
        cached = RetrievalBatch(*(np.concatenate([getattr(c, f) for c in cached]) for f in
                                  ("channels", "entries", "scores", "values", "counts", "evals")))

    logbook = TrainLog()
    logbook.initial_train_mse = evaluate_mse(model, kb, x_tr, y_tr, config.r, exclude=excl_tr, threads=config.threads)
    logbook.initial_val_mse = evaluate_mse(model, kb, x_va, y_va, config.r, threads=config.threads)
    best = model
    logbook.best_val_mse = logbook.initial_val_mse
    state = AdamState.zeros_like(model.params())
    stale = 0

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(x_tr))
        losses = []
        try:
            for start in range(0, len(order), bs):
                idx = order[start : start + bs]
                xb = x_tr[idx]
                yb = y_tr[idx]
                if cached is not None:
                    values, counts = cached.values[idx], cached.counts[idx]
                else:
                    res = retrieve_batch(kb, xb, config.r, excl_tr[idx], threads=config.threads)
                    if config.debug:
                        check_no_leakage(res, kb, excl_tr[idx])
                    values, counts = res.values, res.counts
                _, cache = forward(model, xb, values, counts)
                loss, grads = backward(model, cache, yb)
                if config.freeze_head:
                    grads = {k: g for k, g in grads.items() if not k.startswith("head")}
                params, state = adam_step(model.params(), grads, state, config)
                candidate = model.with_params(params)
                if not candidate.all_finite():
                    raise TrainingError("non-finite parameters")
                model = candidate
                losses.append(loss)
        except TrainingError as exc:
            log.warning("training diverged in epoch %d: %s", epoch, exc)
            logbook.diverged = True
            break
        val = evaluate_mse(model, kb, x_va, y_va, config.r, threads=config.threads)
        logbook.epochs.append(EpochRecord(epoch, float(np.mean(losses)), val, time.perf_counter() - t0))
        log.info("epoch %d train %.6f val %.6f", epoch, logbook.epochs[-1].train_mse, val)
        if val < logbook.best_val_mse:
            logbook.best_val_mse, logbook.best_epoch, best = val, epoch, model
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                logbook.stopped_early = True
                break

    if logbook.diverged:
        best = model  # last finite parameters
    logbook.final_train_mse = evaluate_mse(best, kb, x_tr, y_tr, config.r, exclude=excl_tr, threads=config.threads)
    return best, logbook
