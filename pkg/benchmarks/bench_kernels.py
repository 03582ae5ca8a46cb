"""Compare the compiled scoring kernel with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--channels 8] [--entries 2000] ...

Both backends are fed the same batch; the script checks that their outputs
are bit-identical before reporting timings.
"""

import argparse
import statistics
import time

import numpy as np

from craft import kernels
from craft.graph import build_graph
from craft.memory import Memory
from craft.data import MultivariateSeries
from craft.retrieval import EPS, pool_matrix, query_spectra
from craft.spectral import build_knowledge_base


def make_inputs(args):
    rng = np.random.default_rng(args.seed)
    T = args.entries + args.lookback + args.horizon - 1
    series = MultivariateSeries(rng.standard_normal((T, args.channels)),
                                tuple(f"c{i}" for i in range(args.channels)))
    memory = Memory.from_series(series, args.lookback, args.horizon)
    kb = build_knowledge_base(memory, build_graph(memory, args.neighbors), args.freq)
    x = rng.standard_normal((args.batch, args.lookback, args.channels))
    q_re, q_im, q_norm = query_spectra(kb, x)
    exclude = np.tile(np.array([[1, 0]], dtype=np.int64), (args.batch, 1))
    return (q_re, q_im, q_norm, kb.keys_re, kb.keys_im, kb.norms,
            pool_matrix(kb.graph, np.arange(args.channels)),
            np.ascontiguousarray(kb.t_end, dtype=np.int64), exclude,
            args.lookback, args.horizon, args.top, EPS)


def time_backend(fn, inputs, threads, repeats):
    fn(*inputs, threads)  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*inputs, threads)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--entries", type=int, default=2000)
    p.add_argument("--lookback", type=int, default=720)
    p.add_argument("--horizon", type=int, default=96)
    p.add_argument("--freq", type=int, default=36)
    p.add_argument("--neighbors", type=int, default=3)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--top", type=int, default=1)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    inputs = make_inputs(args)
    results = {name: fn(*inputs, args.threads) for name, fn in kernels.BACKENDS.items()}
    names = list(results)
    for other in names[1:]:
        for a, b in zip(results[names[0]], results[other]):
            if a.tobytes() != b.tobytes():
                raise SystemExit(f"backends {names[0]} and {other} disagree")

    print(f"C={args.channels} N={args.entries} F={args.freq} M={args.neighbors} "
          f"batch={args.batch} threads={args.threads}")
    timings = {name: time_backend(fn, inputs, args.threads, args.repeats)
               for name, fn in kernels.BACKENDS.items()}
    for name, t in timings.items():
        print(f"{name:>8}: {t * 1e3:9.2f} ms/batch")
    if "cython" in timings:
        print(f"speedup: {timings['python'] / timings['cython']:.1f}x")


if __name__ == "__main__":
    main()
