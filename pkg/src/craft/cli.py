"""Command line entry point: ``craft <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .data import ChannelStats, DataError, WindowPair, load_csv, window_arrays
from .graph import similarity_matrix, graph_from_similarity
from .memory import Memory
from .model import forecast_batch, load_checkpoint, save_checkpoint
from .retrieval import retrieve_channel
from .spectral import build_knowledge_base, load_kb, retained_energy, save_kb
from .training import train


def write_stats(stats: ChannelStats, names, path: Path) -> None:
    path.write_text(
        f"channels={','.join(names)}\n"
        f"mean={','.join(repr(float(v)) for v in stats.mean)}\n"
        f"std={','.join(repr(float(v)) for v in stats.std)}\n"
    )


def read_stats(path: Path) -> ChannelStats:
    kv = bench.read_kv(path)
    return ChannelStats(
        np.array([float(v) for v in kv["mean"].split(",")]),
        np.array([float(v) for v in kv["std"].split(",")]),
    )


def _stats_path(kb_path: str) -> Path:
    return Path(str(kb_path) + ".stats")


def read_window(path: str, stats_path: Path | None) -> np.ndarray:
    """Read a query window CSV (optional leading ``date`` column)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    header = rows[0]
    start = 1 if header and header[0].strip().lower() == "date" else 0
    try:
        [float(v) for v in header[start:]]
        body = rows
    except ValueError:
        body = rows[1:]
    x = np.array([[float(v) for v in r[start:]] for r in body], dtype=np.float64)
    if stats_path is not None and stats_path.exists():
        stats = read_stats(stats_path)
        if x.shape[1] == len(stats.mean):
            x = (x - stats.mean) / stats.std
    return x


def _experiment_config(args) -> bench.ExperimentConfig:
    cfg = bench.ExperimentConfig()
    config_path = getattr(args, "config", None)
    if config_path:
        cfg = bench.load_config(config_path, cfg)
    overrides = {}
    mapping = {
        "data": "dataset", "lookback": "lookback", "neighbors": "neighbors", "freq_cutoff": "freq_cutoff",
        "top": "r", "alpha": "alpha", "lr": "lr", "batch_size": "batch_size", "epochs": "epochs",
        "patience": "patience", "hidden": "hidden", "split": "split", "seed": "seed",
        "out_dir": "out_dir", "threads": "threads",
    }
    for arg, key in mapping.items():
        v = getattr(args, arg, None)
        if v is not None:
            overrides[key] = v
    if getattr(args, "horizon", None) is not None:
        overrides["horizons"] = (args.horizon,)
    if getattr(args, "horizons", None):
        overrides["horizons"] = tuple(int(h) for h in args.horizons.split(","))
    for flag in ("cache_retrieval", "freeze_head", "save_kb"):
        if getattr(args, flag, False):
            overrides[flag] = True
    cfg = dataclasses.replace(cfg, **overrides)
    if "dataset" in overrides and not (config_path and "name=" in Path(config_path).read_text()):
        cfg = dataclasses.replace(cfg, name=Path(cfg.dataset).stem)
    if not cfg.dataset:
        raise DataError("no dataset given (--data or dataset= in --config)")
    return cfg


def cmd_build_kb(args) -> int:
    cfg = _experiment_config(args)
    H = cfg.horizons[0]
    data = bench.prepare_data(load_csv(cfg.dataset), cfg, H)
    memory = Memory.from_series(data.train, cfg.lookback, H)
    graph = graph_from_similarity(similarity_matrix(memory), cfg.neighbors)
    kb = build_knowledge_base(memory, graph, cfg.freq_bins)
    save_kb(kb, args.out)
    write_stats(data.stats, data.train.channel_names, _stats_path(args.out))
    energy = np.mean([retained_energy(data.train.values[:, c], cfg.freq_bins) for c in range(kb.config.n_channels)])
    print(f"wrote {args.out}: L={kb.config.lookback} H={H} F={kb.config.freq_cutoff} "
          f"C={kb.config.n_channels} N={kb.config.n_entries} M={graph.m}")
    print(f"mean retained spectral energy over train channels: {energy:.4f}")
    return 0


def cmd_train(args) -> int:
    cfg = _experiment_config(args)
    H = cfg.horizons[0]
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = bench.prepare_data(load_csv(cfg.dataset), cfg, H)
    kb = bench.build_kb_for(data.train, cfg.lookback, H, cfg.neighbors, cfg.freq_bins)
    model, trainlog = train(data.train, data.val, kb, cfg.train_config())
    save_checkpoint(model, out / "model.crmd")
    save_kb(kb, out / "kb.crkb")
    write_stats(data.stats, data.train.channel_names, _stats_path(out / "kb.crkb"))
    trainlog.write(out / "train.log")
    print(trainlog.to_text(), end="")
    return 0


def cmd_eval(args) -> int:
    cfg = _experiment_config(args)
    if args.checkpoint:
        if not args.kb:
            raise DataError("--checkpoint requires --kb")
        model = load_checkpoint(args.checkpoint)
        kb = load_kb(args.kb)
        cfg = dataclasses.replace(cfg, lookback=kb.config.lookback)
        data = bench.prepare_data(load_csv(cfg.dataset), cfg, kb.config.horizon)
        res = bench.evaluate_split(model, kb, data.test, cfg.r, cfg.batch_size, cfg.threads)
        report = bench.MetricsReport(cfg.name, [res.metrics], res.similarity_evals, res.queries,
                                     {kb.config.horizon: (res.retrieval_seconds, res.forward_seconds)})
        report.write(cfg.out_dir)
    else:
        report = bench.run_experiment(cfg)
    print(report.to_table(), end="")
    return 0


def cmd_sweep(args) -> int:
    cfg = _experiment_config(args)
    m_values = [int(v) for v in args.m_values.split(",")]
    rows = bench.sweep_candidates(cfg, m_values)
    print("M\tMSE\tretrieval_s/batch\tforward_s/batch\tsim_evals/query")
    for r in rows:
        print(f"{r.m}\t{r.mse:.5f}\t{r.retrieval_seconds:.5f}\t{r.forward_seconds:.5f}\t{r.evals_per_query:.0f}")
    return 0


def cmd_retrieve(args) -> int:
    kb = load_kb(args.kb)
    x = read_window(args.query, _stats_path(args.kb))
    if x.shape[0] != kb.config.lookback:
        raise DataError(f"query has {x.shape[0]} rows, knowledge base expects {kb.config.lookback}")
    col = x[:, args.channel] if x.shape[1] > 1 else x[:, 0]
    refs = retrieve_channel(kb, col, args.channel, args.top)
    for ref in refs:
        print(f"entry={ref.source_entry}\tchannel={ref.source_channel}\tscore={ref.score:.6f}")
        print("value=" + ",".join(f"{v:.6g}" for v in ref.value))
    if not refs:
        print("no references")
    return 0


def cmd_forecast(args) -> int:
    kb = load_kb(args.kb)
    model = load_checkpoint(args.checkpoint)
    stats_path = _stats_path(args.kb)
    x = read_window(args.query, stats_path)
    out, res = forecast_batch(model, kb, x[None], args.top)
    fused = out.fused[0]
    if stats_path.exists():
        stats = read_stats(stats_path)
        fused = fused * stats.std + stats.mean
    np.savetxt(args.out, fused, delimiter=",", fmt="%.10g")
    with open(str(args.out) + ".provenance.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["channel", "rank", "source_channel", "source_entry", "score"])
        for ref_lists in [res.references(0)]:
            for c, refs in enumerate(ref_lists):
                for rank, ref in enumerate(refs):
                    w.writerow([c, rank, ref.source_channel, ref.source_entry, repr(ref.score)])
    print(f"wrote {args.out}")
    return 0


def cmd_dump_example(args) -> int:
    cfg = _experiment_config(args)
    kb = load_kb(args.kb)
    model = load_checkpoint(args.checkpoint)
    cfg = dataclasses.replace(cfg, lookback=kb.config.lookback)
    data = bench.prepare_data(load_csv(cfg.dataset), cfg, kb.config.horizon)
    x, y, t_end = window_arrays(data.test, kb.config.lookback, kb.config.horizon)
    i = args.index
    window = WindowPair(np.asarray(x[i]), np.asarray(y[i]), int(t_end[i]))
    path = bench.dump_retrieval_example(kb, model, window, args.channel, args.out, cfg.r)
    print(f"wrote {path}")
    return 0


def cmd_show_graph(args) -> int:
    kb = load_kb(args.kb)
    names = None
    sp = _stats_path(args.kb)
    if sp.exists():
        names = bench.read_kv(sp)["channels"].split(",")
    print(kb.graph.adjacency_text(names))
    return 0


def _add_data_flags(p, horizon=True):
    p.add_argument("--data", help="benchmark CSV (date column + channels)")
    p.add_argument("--lookback", type=int)
    if horizon:
        p.add_argument("--horizon", type=int)
    p.add_argument("--split", choices=["auto", "ett-h", "ett-m", "ratio"])


def _add_model_flags(p):
    p.add_argument("--neighbors", type=int)
    p.add_argument("--freq-cutoff", type=int)
    p.add_argument("--top", type=int, help="references per channel")
    p.add_argument("--alpha", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--cache-retrieval", action="store_true")
    p.add_argument("--freeze-head", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand's unset flags from clobbering ones given before it
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--threads", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="craft", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-kb", parents=[common], help="build a knowledge base from the train split")
    _add_data_flags(p)
    p.add_argument("--neighbors", type=int)
    p.add_argument("--freq-cutoff", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_kb)

    p = sub.add_parser("train", parents=[common], help="train one horizon")
    _add_data_flags(p)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="full benchmark run, or evaluate a checkpoint")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--horizons", help="comma-separated horizons")
    p.add_argument("--checkpoint")
    p.add_argument("--kb")
    p.add_argument("--save-kb", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common], help="vary the number of graph neighbours")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--m-values", default="1,2,3,5,10")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("retrieve", parents=[common], help="top references for one channel")
    p.add_argument("--kb", required=True)
    p.add_argument("--query", required=True, help="CSV window of L rows")
    p.add_argument("--channel", type=int, required=True)
    p.add_argument("--top", type=int, default=1)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("forecast", parents=[common], help="fused forecast for one window")
    p.add_argument("--kb", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--top", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("dump-example", parents=[common], help="CSV of a retrieved reference vs ground truth")
    _add_data_flags(p, horizon=False)
    p.add_argument("--kb", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--channel", type=int, required=True)
    p.add_argument("--index", type=int, default=0, help="test window index")
    p.add_argument("--top", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_example)

    p = sub.add_parser("show-graph", parents=[common], help="print the relation graph adjacency")
    p.add_argument("--kb", required=True)
    p.set_defaults(func=cmd_show_graph)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # one-line machine-parseable failure
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
