"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--n 20000] [--dim 64] [--repeat 3]

Each kernel runs on identical inputs under both backends; the script checks
that outputs agree before reporting timings.
"""
import argparse
import time

import numpy as np

from tieredann import kernels
from tieredann.graph import build_graph
from tieredann.harness.datasets import gaussian_mixture, with_sentinel


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _cases(n, dim, R, seed):
    rng = np.random.default_rng(seed)
    vectors = with_sentinel(gaussian_mixture(n, dim, seed=seed))
    lists = build_graph(vectors, R)
    deleted = np.zeros(n + 1, dtype=np.uint8)
    queries = gaussian_mixture(50, dim, seed=seed + 1)
    entries = [rng.choice(np.arange(1, n + 1), 64, replace=False).astype(np.int32)
               for _ in queries]
    trace = rng.zipf(1.2, size=200_000).clip(1, n).astype(np.int32)
    in_degree = np.bincount(lists[1:].ravel(), minlength=n + 1).astype(np.int32)
    in_degree[0] = 0

    def search(b):
        seen = np.zeros(n + 1, dtype=np.int32)
        out = []
        for i, (q, e) in enumerate(zip(queries, entries)):
            ids, *_ = b.beam_search(vectors, lists, deleted, e, q, 64, seen, i + 1)
            out.append(ids)
        return np.concatenate(out)

    def detour(b):
        scratch = np.zeros(n + 1, dtype=np.int32)
        return np.concatenate([b.detour_counts(lists[h], lists, scratch)
                               for h in range(1, min(n, 5000) + 1)])

    def wavp(b):
        M = n // 5
        mapping = np.zeros(n + 1, dtype=np.int32)
        rev = np.zeros(M + 1, dtype=np.int32)
        ref = np.zeros(M + 1, dtype=np.uint8)
        recent = np.zeros(n + 1)
        free = np.arange(M, 0, -1, dtype=np.int32)
        state = np.array([1, M, 0], dtype=np.int64)
        log_h = np.zeros(trace.size, dtype=np.int32)
        log_d = np.zeros(trace.size, dtype=np.int32)
        counters = np.zeros(6)
        b.wavp_process(trace, 0, trace.size, mapping, rev, ref, recent, in_degree, free, state,
                       0.6, 0.4, 2.0, 4096, 0.5, log_h, log_d, counters)
        return counters

    def lru(b):
        M = n // 5
        cap = 4 * M + 16
        counters = np.zeros(6)
        b.baseline_process(
            kernels.LRU, trace, 0, trace.size, np.zeros(n + 1, dtype=np.int32),
            np.zeros(M + 1, dtype=np.int32), np.arange(M, 0, -1, dtype=np.int32),
            np.array([M, 0, 0], dtype=np.int64), np.zeros(M + 1), np.zeros(M + 1, np.int64),
            np.zeros(M + 1, np.int64), np.zeros(cap), np.zeros(cap), np.zeros(cap, np.int32),
            np.zeros(cap, np.int64), 0.1, np.zeros(trace.size, np.int32),
            np.zeros(trace.size, np.int32), counters)
        return counters

    return {"beam_search (50 queries, L=64)": search,
            "detour_counts (5K lists)": detour,
            "wavp_process (200K accesses)": wavp,
            "lru baseline_process (200K accesses)": lru}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20_000)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--R", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    try:
        cy = kernels.get_backend("cython")
    except ImportError:
        raise SystemExit("compiled kernels are not built; run `pip install -e .` first")
    py = kernels.get_backend("python")
    print(f"building a {args.n} x {args.dim} graph (R={args.R}) ...", flush=True)
    cases = _cases(args.n, args.dim, args.R, args.seed)
    print(f"{'kernel':40s} {'python s':>10s} {'cython s':>10s} {'speedup':>9s}")
    for name, fn in cases.items():
        tp, op = _best(lambda: fn(py), 1)
        tc, oc = _best(lambda: fn(cy), args.repeat)
        if not np.array_equal(op, oc):
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:40s} {tp:10.3f} {tc:10.3f} {tp / tc:8.1f}x", flush=True)


if __name__ == "__main__":
    main()
