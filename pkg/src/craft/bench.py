"""Experiment orchestration: benchmark runs, candidate sweeps and example dumps."""

from __future__ import annotations

import csv
import dataclasses
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import (
    ChannelStats,
    DataError,
    MultivariateSeries,
    WindowPair,
    apply_stats,
    ett_split,
    fit_stats,
    load_csv,
    split_chronological,
    window_arrays,
    with_context,
)
from .graph import build_graph, similarity_matrix, graph_from_similarity
from .memory import Memory
from .model import CraftModel, forecast_batch, save_checkpoint
from .retrieval import retrieve_batch
from .spectral import KnowledgeBase, build_knowledge_base, default_freq_cutoff, save_kb
from .training import TrainConfig, train

log = logging.getLogger(__name__)

WARMUP_BATCHES = 5


def metric_mse(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def metric_mae(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred - target)))


@dataclass
class ExperimentConfig:
    dataset: str = ""
    name: str = ""
    lookback: int = 720
    horizons: tuple[int, ...] = (96, 192, 336, 720)
    neighbors: int = 3
    r: int = 1
    freq_cutoff: int = 0  # 0: 5% of the real-FFT bins (36 at L=720)
    alpha: float = 0.001
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 10
    patience: int = 3
    hidden: int = 512
    seed: int = 0
    split: str = "auto"  # auto | ett-h | ett-m | ratio
    ratios: tuple[float, ...] = (0.7, 0.1, 0.2)
    context: bool = True
    out_dir: str = "runs"
    threads: int = 1
    cache_retrieval: bool = False
    freeze_head: bool = False
    save_kb: bool = False

    def __post_init__(self):
        if not self.name and self.dataset:
            self.name = Path(self.dataset).stem

    @property
    def freq_bins(self) -> int:
        return self.freq_cutoff or default_freq_cutoff(self.lookback)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, batch_size=self.batch_size, epochs=self.epochs, patience=self.patience,
            seed=self.seed, alpha=self.alpha, r=self.r, hidden=self.hidden,
            freeze_head=self.freeze_head, cache_retrieval=self.cache_retrieval, threads=self.threads,
        )

    def split_protocol(self) -> str:
        if self.split != "auto":
            return self.split
        name = self.name.lower()
        if name.startswith("etth"):
            return "ett-h"
        if name.startswith("ettm"):
            return "ett-m"
        return "ratio"


def _parse_value(kind, text: str):
    kind = str(kind)
    if kind.startswith("tuple"):
        inner = float if "float" in kind else int
        return tuple(inner(v) for v in text.split(",") if v.strip())
    if kind == "bool":
        low = text.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {text!r}")
        return low in ("true", "1", "yes")
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text.strip()


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    types = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        updates[key] = _parse_value(types[key], value)
    return dataclasses.replace(base or ExperimentConfig(), **updates)


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(), base)


def config_to_text(config: ExperimentConfig) -> str:
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = ",".join(repr(x) for x in v)
        lines.append(f"{f.name}={v}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PreparedData:
    train: MultivariateSeries
    val: MultivariateSeries  # with lookback context when enabled
    test: MultivariateSeries
    stats: ChannelStats


def prepare_data(series: MultivariateSeries, config: ExperimentConfig, horizon: int) -> PreparedData:
    L = config.lookback
    need = L + horizon
    proto = config.split_protocol()
    if proto == "ett-h":
        parts = ett_split(series, 24, 1)
    elif proto == "ett-m":
        parts = ett_split(series, 96, 1)
    elif proto == "ratio":
        parts = split_chronological(series, config.ratios, 1)
    else:
        raise ValueError(f"unknown split protocol {proto!r}")
    stats = fit_stats(parts[0])
    train_s, val_s, test_s = (apply_stats(stats, p) for p in parts)
    if config.context:
        val_s = with_context(train_s, val_s, L)
        test_s = with_context(val_s, test_s, L)
    for name, seg in (("train", train_s), ("val", val_s), ("test", test_s)):
        if seg.n_steps < need:
            raise DataError(f"{name} segment has {seg.n_steps} rows, need at least {need}")
    return PreparedData(train_s, val_s, test_s, stats)


def build_kb_for(train_series: MultivariateSeries, lookback: int, horizon: int, neighbors: int, f: int) -> KnowledgeBase:
    memory = Memory.from_series(train_series, lookback, horizon)
    graph = build_graph(memory, neighbors)
    return build_knowledge_base(memory, graph, f)


@dataclass
class HorizonMetrics:
    horizon: int
    mse: float
    mae: float
    direct_mse: float
    direct_mae: float
    windows: int


@dataclass
class EvalResult:
    metrics: HorizonMetrics
    similarity_evals: int
    queries: int
    retrieval_seconds: float  # median per batch
    forward_seconds: float  # median per batch


def _median_timed(times: list[float]) -> float:
    timed = times[WARMUP_BATCHES:] if len(times) > WARMUP_BATCHES else times
    return statistics.median(timed) if timed else float("nan")


def evaluate_split(
    model: CraftModel, kb: KnowledgeBase, series: MultivariateSeries, r: int,
    batch_size: int = 32, threads: int = 1,
) -> EvalResult:
    """Test-set MSE/MAE of fused and direct forecasts plus timing and op counts."""
    L, H = kb.config.lookback, kb.config.horizon
    x, y, _ = window_arrays(series, L, H)
    sq = ab = dsq = dab = 0.0
    n = 0
    evals = 0
    t_retr, t_full = [], []
    for start in range(0, len(x), batch_size):
        xb = np.asarray(x[start : start + batch_size])
        yb = np.asarray(y[start : start + batch_size])
        t0 = time.perf_counter()
        retrieve_batch(kb, xb, r, threads=threads)
        t1 = time.perf_counter()
        out, res = forecast_batch(model, kb, xb, r, threads=threads)
        t2 = time.perf_counter()
        t_retr.append(t1 - t0)
        t_full.append(t2 - t1)
        err = out.fused - yb
        derr = out.direct - yb
        sq += float(np.sum(err * err))
        ab += float(np.sum(np.abs(err)))
        dsq += float(np.sum(derr * derr))
        dab += float(np.sum(np.abs(derr)))
        n += err.size
        evals += int(res.evals.sum())
    m = HorizonMetrics(H, sq / n, ab / n, dsq / n, dab / n, len(x))
    return EvalResult(m, evals, len(x), _median_timed(t_retr), _median_timed(t_full))


@dataclass
class MetricsReport:
    dataset: str
    rows: list[HorizonMetrics] = field(default_factory=list)
    similarity_evals: int = 0
    queries: int = 0
    timing: dict[int, tuple[float, float]] = field(default_factory=dict)

    @property
    def avg_mse(self) -> float:
        return float(np.mean([r.mse for r in self.rows]))

    @property
    def avg_mae(self) -> float:
        return float(np.mean([r.mae for r in self.rows]))

    def to_kv(self) -> str:
        """Deterministic machine-readable report (timings live in ``timing_kv``)."""
        lines = [f"dataset={self.dataset}", f"horizons={','.join(str(r.horizon) for r in self.rows)}"]
        for r in self.rows:
            for key in ("mse", "mae", "direct_mse", "direct_mae", "windows"):
                lines.append(f"H{r.horizon}.{key}={getattr(r, key)!r}")
        lines.append(f"avg.mse={self.avg_mse!r}")
        lines.append(f"avg.mae={self.avg_mae!r}")
        lines.append(f"similarity_evals={self.similarity_evals}")
        lines.append(f"queries={self.queries}")
        return "\n".join(lines) + "\n"

    def timing_kv(self) -> str:
        lines = []
        for h, (retr, full) in sorted(self.timing.items()):
            lines.append(f"H{h}.retrieval_seconds_per_batch={retr!r}")
            lines.append(f"H{h}.forward_seconds_per_batch={full!r}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        lines = [f"dataset: {self.dataset}", f"{'H':>5} {'MSE':>9} {'MAE':>9} {'dir.MSE':>9} {'dir.MAE':>9}"]
        for r in self.rows:
            lines.append(f"{r.horizon:>5} {r.mse:9.4f} {r.mae:9.4f} {r.direct_mse:9.4f} {r.direct_mae:9.4f}")
        if self.rows:
            lines.append(f"{'avg':>5} {self.avg_mse:9.4f} {self.avg_mae:9.4f}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.kv").write_text(self.to_kv())
        (out / "report.txt").write_text(self.to_table())
        (out / "timing.kv").write_text(self.timing_kv())


def read_kv(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line and not line.startswith("#"):
            k, v = line.split("=", 1)
            out[k] = v
    return out


def run_experiment(config: ExperimentConfig) -> MetricsReport:
    series = load_csv(config.dataset)
    report = MetricsReport(config.name)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.kv").write_text(config_to_text(config))
    for H in config.horizons:
        log.info("%s: horizon %d", config.name, H)
        data = prepare_data(series, config, H)
        kb = build_kb_for(data.train, config.lookback, H, config.neighbors, config.freq_bins)
        model, trainlog = train(data.train, data.val, kb, config.train_config())
        save_checkpoint(model, out / f"model_H{H}.crmd")
        trainlog.write(out / f"train_H{H}.log")
        if config.save_kb:
            save_kb(kb, out / f"kb_H{H}.crkb")
        res = evaluate_split(model, kb, data.test, config.r, config.batch_size, config.threads)
        report.rows.append(res.metrics)
        report.similarity_evals += res.similarity_evals
        report.queries += res.queries
        report.timing[H] = (res.retrieval_seconds, res.forward_seconds)
        report.write(out)  # flush partial results per horizon
    return report


@dataclass
class SweepRow:
    m: int
    mse: float
    mae: float
    retrieval_seconds: float
    forward_seconds: float
    evals_per_query: float


def sweep_with_model(
    model: CraftModel, kb: KnowledgeBase, full_graph_source, test: MultivariateSeries,
    m_values: Sequence[int], r: int, batch_size: int = 32, threads: int = 1,
) -> list[SweepRow]:
    """Evaluate a trained model under relation graphs of varying size.

    ``full_graph_source`` is the (C, C) channel similarity matrix; each M
    takes the top-M neighbours of the full ranking.
    """
    if not m_values:
        raise ValueError("m_values must be non-empty")
    C = kb.config.n_channels
    full = graph_from_similarity(full_graph_source, C - 1)
    rows = []
    for m in m_values:
        if m < 1:
            raise ValueError(f"M must be >= 1, got {m}")
        res = evaluate_split(model, kb.with_graph(full.truncate(m)), test, r, batch_size, threads)
        rows.append(
            SweepRow(m, res.metrics.mse, res.metrics.mae, res.retrieval_seconds,
                     res.forward_seconds, res.similarity_evals / res.queries)
        )
    return rows


def write_sweep(rows: Sequence[SweepRow], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["M", "MSE", "MAE", "retrieval_seconds_per_batch", "forward_seconds_per_batch", "sim_evals_per_query"])
        for r in rows:
            w.writerow([r.m, repr(r.mse), repr(r.mae), repr(r.retrieval_seconds), repr(r.forward_seconds), repr(r.evals_per_query)])


def sweep_candidates(config: ExperimentConfig, m_values: Sequence[int], horizon: int | None = None) -> list[SweepRow]:
    """Train once at ``config.neighbors`` and re-evaluate for every M."""
    if not m_values or min(m_values) < 1:
        raise ValueError("m_values must be non-empty and >= 1")
    H = horizon or config.horizons[0]
    series = load_csv(config.dataset)
    data = prepare_data(series, config, H)
    memory = Memory.from_series(data.train, config.lookback, H)
    sim = similarity_matrix(memory)
    graph = graph_from_similarity(sim, config.neighbors)
    kb = build_knowledge_base(memory, graph, config.freq_bins)
    model, _ = train(data.train, data.val, kb, config.train_config())
    rows = sweep_with_model(model, kb, sim, data.test, m_values, config.r, config.batch_size, config.threads)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep(rows, out / "sweep.csv")
    return rows


def dump_retrieval_example(
    kb: KnowledgeBase, model: CraftModel, window: WindowPair, channel: int, out: str | Path, r: int = 1,
    exclude=None,
) -> Path:
    """CSV of one channel's horizon: t, ground truth, top-1 retrieved value, fused forecast.

    The ``retrieved`` column is omitted when nothing was retrieved. ``exclude``
    is an optional inclusive (lo, hi) time interval hidden from retrieval.
    """
    C = kb.config.n_channels
    if not 0 <= channel < C:
        raise IndexError(f"channel {channel} out of range for C={C}")
    x = np.asarray(window.x, dtype=np.float64)
    fc, res = forecast_batch(model, kb, x[None], r, None if exclude is None else [exclude])
    has_ref = res.counts[0, channel] > 0
    H = kb.config.horizon
    header = ["t", "ground_truth"] + (["retrieved"] if has_ref else []) + ["fused"]
    out = Path(out)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        if has_ref:
            w.writerow([f"# source_channel={int(res.channels[0, channel, 0])}",
                        f"source_entry={int(res.entries[0, channel, 0])}",
                        f"score={float(res.scores[0, channel, 0])!r}"])
        w.writerow(header)
        for h in range(H):
            row = [window.t_end + 1 + h, repr(float(window.y[h, channel]))]
            if has_ref:
                row.append(repr(float(res.values[0, channel, 0, h])))
            row.append(repr(float(fc.fused[0, h, channel])))
            w.writerow(row)
    return out


def load_example(path: str | Path) -> dict[str, np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = [row for row in csv.reader(fh) if row and not row[0].startswith("#")]
    header, body = rows[0], rows[1:]
    cols = {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(header)}
    cols["t"] = cols["t"].astype(np.int64)
    return cols
