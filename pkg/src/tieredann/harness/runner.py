"""Trace driver: batch scheduler, worker pool, rate limiter and checkpoint metrics."""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..config import IndexConfig
from ..index import TieredIndex
from ..search import recall_at_k, search_one
from .groundtruth import IncrementalGroundTruth
from .metrics import JsonlSink, MetricsRecord, percentiles
from .workloads import Trace, validate_trace

MAX_BATCH = 1 << 13


class RateLimiter:
    """Open-loop pacing: op ``i`` is released at ``start + i / qps``."""

    def __init__(self, qps: float = 0.0):
        self.qps = float(qps)
        self.start: float | None = None
        self.issued = 0

    def acquire(self) -> float:
        """Block until the next op's slot; returns its scheduled time."""
        now = time.perf_counter()
        if self.qps <= 0:
            return now
        if self.start is None:
            self.start = now
        due = self.start + self.issued / self.qps
        self.issued += 1
        if due > now:
            time.sleep(due - now)
        return due


@dataclass
class RunResult:
    records: list
    summary: MetricsRecord
    index: TieredIndex | None
    policies: dict = field(default_factory=dict)


class _Window:
    def __init__(self):
        self.latencies: list[float] = []
        self.search_time = 0.0
        self.n_search = 0
        self.insert_time = 0.0
        self.n_insert = 0


def _cache_totals(cache) -> np.ndarray:
    return cache.counters[:3].astype(np.float64).copy()


def run_trace(trace: Trace, vectors, queries, config: IndexConfig | None = None,
              k: int | None = None, L: int | None = None, batch_size: int | None = None,
              workers: int | None = None, target_qps: float | None = None,
              metrics_path: str | None = None, shadow_policies=(), progress=None) -> RunResult:
    """Replay ``trace`` and emit one :class:`MetricsRecord` per checkpoint.

    Maintenance (repair, consolidation, hot-tier sync) runs at step
    boundaries and before each checkpoint, so batch size changes timing
    only. With several workers, concurrent links may commit reverse edges
    in a different order, so the graph can differ slightly between runs.
    """
    cfg = config or IndexConfig()
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    queries = np.atleast_2d(np.ascontiguousarray(queries, dtype=np.float32))
    if vectors.ndim != 2 or queries.shape[1] != vectors.shape[1]:
        raise ValueError(f"query dimension {queries.shape[1]} does not match "
                         f"vectors ({vectors.shape[1]})")
    validate_trace(trace, len(vectors), len(queries))
    k = k or cfg.k
    L = L or cfg.L_search
    batch = int(cfg.batch_size if batch_size is None else batch_size)
    if not 1 <= batch <= MAX_BATCH:
        raise ValueError(f"batch size must be in [1, {MAX_BATCH}]")
    workers = int(cfg.workers if workers is None else workers)
    limiter = RateLimiter(cfg.target_qps if target_qps is None else target_qps)
    sink = JsonlSink(metrics_path)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    n_total = sum(s[1] for s in trace.steps if s[0] == "B") + \
        sum(1 for s in trace.steps if s[0] == "I")
    hot = cfg.hot_slots(n_total)
    gt = IncrementalGroundTruth(queries, k, capacity=n_total)
    state = {"index": None, "next_id": 1, "mutated": False, "step": 0}
    win = _Window()
    counts = {"inserts": 0, "deletes": 0, "searches": 0, "checkpoints": 0, "maintenance": 0}
    last_cost = None
    recalls = []
    all_latencies: list[float] = []

    def fanout(fn, items):
        if pool is None or len(items) <= 1:
            return [fn(x) for x in items]
        return list(pool.map(fn, items))

    def ensure_index():
        if state["index"] is None:
            index = TieredIndex(vectors.shape[1], cfg, hot_capacity=hot,
                                initial_capacity=max(n_total, 1))
            for p in shadow_policies:
                index.add_shadow(p)
            state["index"] = index
        return state["index"]

    def do_build(n):
        t0 = time.perf_counter()
        index = TieredIndex.build(vectors[:n], cfg, hot_capacity=hot)
        for p in shadow_policies:
            index.add_shadow(p)
        state["index"] = index
        state["next_id"] = n + 1
        gt.add(np.arange(1, n + 1), vectors[:n])
        win.insert_time += time.perf_counter() - t0

    def do_inserts(rows):
        index = ensure_index()
        t0 = time.perf_counter()
        ids = [index.updates.reserve(vectors[i]) for i in rows]
        expect = list(range(state["next_id"], state["next_id"] + len(rows)))
        if ids != expect:
            raise RuntimeError("id allocation diverged from the trace")
        state["next_id"] += len(rows)
        fanout(index.updates.link, ids)
        win.insert_time += time.perf_counter() - t0
        win.n_insert += len(rows)
        counts["inserts"] += len(rows)
        gt.add(ids, vectors[rows])
        state["mutated"] = True

    def do_deletes(ids):
        index = state["index"]
        for h in ids:
            index.delete(h)
        counts["deletes"] += len(ids)
        gt.remove(ids)
        state["mutated"] = True

    def one_search(args):
        qidx, kk = args
        due = limiter.acquire()
        res = search_one(state["index"], queries[qidx], kk, max(L, kk), cfg.seed, qidx)
        return res, (time.perf_counter() - due) * 1e3

    def do_searches(items):
        # pacing happens on the driver, so the limiter is not shared across threads
        t0 = time.perf_counter()
        if limiter.qps > 0 or pool is None:
            out = [one_search(it) for it in items]
        else:
            out = fanout(one_search, items)
        win.search_time += time.perf_counter() - t0
        win.n_search += len(items)
        lat = [x[1] for x in out]
        win.latencies.extend(lat)
        all_latencies.extend(lat)
        counts["searches"] += len(items)
        return [x[0] for x in out]

    def maintain():
        if state["mutated"] and state["index"] is not None:
            state["index"].maintain()
            counts["maintenance"] += 1
        state["mutated"] = False

    def checkpoint():
        nonlocal last_cost, win
        maintain()
        index = state["index"]
        truth = gt.topk()
        results = do_searches([(i, k) for i in range(len(queries))])
        rec = float(np.mean([recall_at_k(r.ids, t, k) for r, t in zip(results, truth)]))
        recalls.append(rec)
        totals = _cache_totals(index.cache)
        delta = totals if last_cost is None else totals - last_cost
        last_cost = totals
        accesses = delta.sum()
        p50, p95, p99 = percentiles(win.latencies)
        r = MetricsRecord(
            step=state["step"], recall=rec,
            search_throughput=win.n_search / win.search_time if win.search_time else 0.0,
            insert_throughput=win.n_insert / win.insert_time if win.insert_time else 0.0,
            miss_rate=float((delta[1] + delta[2]) / accesses) if accesses else 0.0,
            p50=p50, p95=p95, p99=p99,
            modeled_cost=float(index.cost.cost(*delta)), k=k, live=len(index))
        sink.emit(r)
        counts["checkpoints"] += 1
        if progress:
            progress(r)
        win = _Window()

    pending_op, pending = None, []

    def flush():
        nonlocal pending_op, pending
        if pending_op == "I":
            do_inserts(pending)
        elif pending_op == "D":
            do_deletes(pending)
        elif pending_op == "S":
            do_searches(pending)
        pending_op, pending = None, []

    try:
        for s in trace.steps:
            op = s[0]
            if op in ("I", "D", "S"):
                if op != pending_op or len(pending) >= batch:
                    flush()
                    pending_op = op
                pending.append(s[1] if op != "S" else (s[1], s[2]))
                continue
            flush()
            if op == "#":
                maintain()
                state["step"] = s[1]
            elif op == "B":
                do_build(s[1])
            elif op == "C":
                checkpoint()
        flush()
        maintain()
    finally:
        if pool is not None:
            pool.shutdown()

    index = state["index"]
    policies = {}
    summary_cost, summary_miss = 0.0, 0.0
    if index is not None:
        for c in index.policies():
            policies[c.name] = c.stats()
        st = index.cache.stats()
        summary_cost, summary_miss = st["modeled_cost"], st["miss_rate"]
    p50, p95, p99 = percentiles(all_latencies)
    summary = MetricsRecord(
        step=state["step"], recall=float(np.mean(recalls)) if recalls else 0.0,
        miss_rate=summary_miss, p50=p50, p95=p95, p99=p99, modeled_cost=summary_cost, k=k,
        live=len(index) if index is not None else 0, kind="summary",
        extra={**counts, "min_recall": float(min(recalls)) if recalls else 0.0,
               "policies": policies})
    sink.emit(summary)
    sink.close()
    return RunResult(sink.records[:-1], summary, index, policies)


def run_stress(vectors, config: IndexConfig | None = None, n_base: int = 5000,
               rounds: int = 200, batch: int = 10, L: int | None = None,
               workers: int = 1) -> dict:
    """Alternate insert batches with searches for the vectors just inserted.

    Returns recall@1 over all searches, i.e. the fraction that found their
    own freshly inserted vector.
    """
    cfg = config or IndexConfig()
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    need = n_base + rounds * batch
    if len(vectors) < need:
        raise ValueError(f"need {need} vectors, have {len(vectors)}")
    L = L or cfg.L_search
    index = TieredIndex.build(vectors[:n_base], cfg, hot_capacity=cfg.hot_slots(need))
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    found = 0
    total = 0
    latencies = []
    try:
        for r in range(rounds):
            rows = range(n_base + r * batch, n_base + (r + 1) * batch)
            ids = [index.updates.reserve(vectors[i]) for i in rows]
            if pool:
                list(pool.map(index.updates.link, ids))
            else:
                for h in ids:
                    index.updates.link(h)
            index.maintain()

            def probe(args):
                h, i = args
                res = search_one(index, vectors[i], 1, L, cfg.seed, h)
                return int(res.ids[0]) == h if res.ids.size else False, res.latency_ms

            items = list(zip(ids, rows))
            out = list(pool.map(probe, items)) if pool else [probe(x) for x in items]
            found += sum(ok for ok, _ in out)
            total += len(out)
            latencies.extend(lat for _, lat in out)
    finally:
        if pool:
            pool.shutdown()
    p50, p95, p99 = percentiles(latencies)
    return {"recall_at_1": found / total if total else 0.0, "searches": total,
            "sync": cfg.sync, "p50": p50, "p95": p95, "p99": p99,
            "stats": index.cache.stats()}
