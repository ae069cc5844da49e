"""Command-line entry point: ``tieredann <subcommand> ...``."""
import argparse
import json
import os
import sys
import time

import numpy as np

from .config import IndexConfig, load_config
from .graph import VersionedGraph
from .harness.datasets import gaussian_mixture
from .harness.groundtruth import ground_truth
from .harness.runner import run_stress, run_trace
from .harness.spread import MODES, measure_deletion_spread
from .harness.workloads import (WORKLOADS, gen_clustered, gen_expiration, gen_growth,
                                gen_sliding_window, read_trace)
from .index import TieredIndex
from .vecio import read_vecs, write_vecs


def _config(args, base: IndexConfig | None = None) -> IndexConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        cfg = base or IndexConfig()
    over = {}
    for name in ("R", "seed", "policy", "workers", "batch_size"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    if getattr(args, "L", None) is not None:
        over["L_search"] = args.L
    if getattr(args, "k", None) is not None:
        over["k"] = args.k
    if getattr(args, "qps", None) is not None:
        over["target_qps"] = args.qps
    if getattr(args, "no_sync", False):
        over["sync"] = False
    return cfg.replace(**over)


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2, default=float)
    if out:
        with open(out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)


def _make_trace(args, vectors, n_queries=100):
    w = args.workload
    if w == "sliding":
        return gen_sliding_window(len(vectors), args.T_max, bootstrap=args.bootstrap)
    if w == "expiration":
        return gen_expiration(len(vectors), args.T_max, seed=args.seed or 0)
    if w == "clustered":
        return gen_clustered(vectors, args.n_clusters, args.rounds, seed=args.seed or 0)
    if w == "growth":
        return gen_growth(len(vectors), args.n_ops, args.insert_ratio, seed=args.seed or 0,
                          n_queries=n_queries)
    raise ValueError(w)


# -- subcommands --------------------------------------------------------------

def cmd_gen_data(args):
    x = gaussian_mixture(args.n + args.queries, args.dim, n_clusters=args.clusters,
                         seed=args.seed)
    write_vecs(args.out, x[: args.n])
    if args.queries:
        write_vecs(args.queries_out or args.out.replace(".fvecs", ".queries.fvecs"),
                   x[args.n:])


def cmd_build(args):
    cfg = _config(args)
    x = read_vecs(args.data, count=args.n)
    t0 = time.perf_counter()
    index = TieredIndex.build(x, cfg)
    index.save(args.out)
    print(f"built {len(x)} vectors in {time.perf_counter() - t0:.1f}s -> {args.out}",
          file=sys.stderr)


def cmd_search(args):
    index = TieredIndex.load(args.index)
    cfg = _config(args, index.config)
    index.config = cfg.replace(R=index.graph.R)
    q = read_vecs(args.queries)
    res = index.search_batch(q, cfg.k, cfg.L_search, cfg.seed, workers=cfg.workers)
    out = open(args.out, "w") if args.out else sys.stdout
    for i, r in enumerate(res):
        out.write(json.dumps({"query": i, **r.to_json()}) + "\n")
    if args.out:
        out.close()
    if args.gt:
        from .search import recall_at_k
        gt = read_vecs(args.gt, kind="ivecs").astype(np.int64)
        rec = np.mean([recall_at_k(r.ids, g, cfg.k) for r, g in zip(res, gt)])
        print(f"recall@{cfg.k} = {rec:.4f}", file=sys.stderr)


def cmd_gen_trace(args):
    x = read_vecs(args.data, count=args.n)
    args.seed = args.seed or 0
    tr = _make_trace(args, x, args.n_queries)
    tr.write(args.out)
    print(json.dumps(tr.counts()), file=sys.stderr)


def _trace_for(args, x, q):
    if args.trace and os.path.exists(args.trace):
        return read_trace(args.trace)
    if not args.workload:
        raise SystemExit("need --workload or an existing --trace")
    tr = _make_trace(args, x, len(q))
    if args.trace:
        tr.write(args.trace)
    return tr


def cmd_run(args):
    cfg = _config(args)
    x = read_vecs(args.data, count=args.n)
    q = read_vecs(args.queries, count=args.n_queries)
    tr = _trace_for(args, x, q)

    def show(rec):
        print(f"step {rec.step}: recall@{rec.k}={rec.recall:.4f} miss={rec.miss_rate:.3f} "
              f"live={rec.live}", file=sys.stderr)

    res = run_trace(tr, x, q, cfg, metrics_path=args.out, progress=show)
    print(res.summary.to_json())


def cmd_gt(args):
    x = read_vecs(args.data, count=args.n)
    q = read_vecs(args.queries, count=args.n_queries)
    live = range(1, len(x) + 1)
    if args.trace:
        # live set after replaying the whole trace
        tr = read_trace(args.trace)
        alive, nxt = set(), 1
        for s in tr.steps:
            if s[0] == "B":
                alive.update(range(1, s[1] + 1))
                nxt = s[1] + 1
            elif s[0] == "I":
                alive.add(nxt)
                nxt += 1
            elif s[0] == "D":
                alive.discard(s[1])
        live = alive
        by_id = np.zeros((nxt, x.shape[1]), dtype=np.float32)
        order = [s[1] for s in tr.steps if s[0] == "I"]
        built = next((s[1] for s in tr.steps if s[0] == "B"), 0)
        by_id[1: built + 1] = x[:built]
        by_id[built + 1: built + 1 + len(order)] = x[order]
    else:
        by_id = np.vstack([np.zeros((1, x.shape[1]), np.float32), x])
    gt = ground_truth(by_id, live, q, args.k)
    k = min(args.k, min((len(g) for g in gt), default=0))
    write_vecs(args.out, np.array([g[:k] for g in gt], dtype=np.int32), kind="ivecs")


def cmd_bench_cache(args):
    cfg = _config(args)
    policies = [p.strip().lower() for p in args.policies.split(",") if p.strip()]
    x = read_vecs(args.data, count=args.n)
    q = read_vecs(args.queries, count=args.n_queries)
    tr = _trace_for(args, x, q)
    # the first policy owns the hot tier, the rest observe the same accesses
    res = run_trace(tr, x, q, cfg.replace(policy=policies[0]), shadow_policies=policies[1:])
    table = {p: res.policies[p] for p in policies}
    _emit({"recall": res.summary.recall, "policies": table}, args.out)


def cmd_stress(args):
    cfg = _config(args)
    x = read_vecs(args.data)
    _emit(run_stress(x, cfg, args.n_base, args.rounds, args.batch, workers=cfg.workers),
          args.out)


def cmd_spread(args):
    if args.index:
        graph, _ = VersionedGraph.load(os.path.join(args.index, "graph.bin"))
        vectors = None
        if args.mode == "clustered":
            v = read_vecs(os.path.join(args.index, "vectors.fvecs"))
            vectors = np.vstack([np.zeros((1, v.shape[1]), np.float32), v])
    else:
        x = read_vecs(args.data, count=args.n)
        cfg = _config(args)
        index = TieredIndex.build(x, cfg.replace(warm_up=False), hot_capacity=0)
        graph, vectors = index.graph, index.store.vectors
    _emit(measure_deletion_spread(graph, args.fraction, args.seed or 0, args.mode, vectors),
          args.out)


# -- parser -------------------------------------------------------------------

def _common(p, data=True, queries=False, graph=False):
    if data:
        p.add_argument("--data", required=True, help="base vectors (fvecs/bvecs)")
        p.add_argument("--n", type=int, help="use only the first n vectors")
    if queries:
        p.add_argument("--queries", required=True, help="query vectors (fvecs)")
        p.add_argument("--n-queries", type=int)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int)
    if graph:
        p.add_argument("--R", type=int, help="graph out-degree")


def _workload_args(p):
    p.add_argument("--workload", choices=WORKLOADS)
    p.add_argument("--T-max", dest="T_max", type=int, default=200)
    p.add_argument("--bootstrap", choices=("insert", "build"), default="insert")
    p.add_argument("--n-clusters", type=int, default=64)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--n-ops", type=int, default=10000)
    p.add_argument("--insert-ratio", type=float, default=0.9)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tieredann", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic Gaussian-mixture dataset")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--dim", type=int, default=100)
    p.add_argument("--clusters", type=int, default=64)
    p.add_argument("--queries", type=int, default=100)
    p.add_argument("--queries-out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("build", help="build an index directory from a vector file")
    _common(p, graph=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("search", help="search a saved index, one JSON line per query")
    p.add_argument("--index", required=True)
    _common(p, data=False, queries=True)
    p.add_argument("--k", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--gt", help="ivecs ground truth; prints recall")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("gen-trace", help="generate a workload trace file")
    _common(p)
    _workload_args(p)
    p.add_argument("--n-queries", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_trace)

    p = sub.add_parser("run", help="replay a workload and write per-checkpoint metrics")
    _common(p, queries=True, graph=True)
    _workload_args(p)
    p.add_argument("--trace", help="trace file (generated here if missing)")
    p.add_argument("--policy")
    p.add_argument("--k", type=int)
    p.add_argument("--L", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--qps", type=float)
    p.add_argument("--no-sync", action="store_true", help="test only: skip hot-tier sync")
    p.add_argument("--out", help="metrics JSON lines")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("gt", help="exact top-k by linear scan (ivecs output)")
    _common(p, queries=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--trace", help="evaluate over the live set after this trace")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gt)

    p = sub.add_parser("bench-cache", help="compare placement policies on one trace")
    _common(p, queries=True, graph=True)
    _workload_args(p)
    p.add_argument("--trace")
    p.add_argument("--policies", default="wavp,lru,lfu,lrfu")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench_cache)

    p = sub.add_parser("stress", help="interleaved insert/search consistency check")
    _common(p, graph=True)
    p.add_argument("--n-base", type=int, default=5000)
    p.add_argument("--rounds", type=int, default=200)
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--workers", type=int)
    p.add_argument("--no-sync", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_stress)

    p = sub.add_parser("measure-deletion-spread",
                       help="histogram of deleted-neighbor fractions after random deletes")
    p.add_argument("--index", help="saved index directory (else build from --data)")
    p.add_argument("--data")
    p.add_argument("--n", type=int)
    p.add_argument("--config")
    p.add_argument("--R", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--fraction", type=float, default=0.1)
    p.add_argument("--mode", choices=MODES, default="uniform")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_spread)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.cmd == "measure-deletion-spread" and not (args.index or args.data):
        raise SystemExit("need --index or --data")
    args.fn(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
