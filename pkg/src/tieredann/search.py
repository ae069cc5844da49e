"""Beam search over the tiered graph, plus the small pieces around it."""
import time
from bisect import insort
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class CandidatePool:
    """Bounded pool of (distance, id) entries kept in ascending order.

    Mirrors what the compiled kernel keeps internally; useful for reasoning
    about and testing the update rule in isolation.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("pool capacity must be positive")
        self.capacity = capacity
        self.entries: list[tuple[float, int]] = []
        self.visited: set[int] = set()
        self.seen: set[int] = set()

    def update(self, scored) -> bool:
        """Merge (id, distance) pairs; returns whether the kept set changed."""
        before = list(self.entries)
        for h, d in scored:
            h = int(h)
            if h in self.seen:
                continue
            self.seen.add(h)
            insort(self.entries, (float(d), h))
        dropped = self.entries[self.capacity:]
        del self.entries[self.capacity:]
        for _, h in dropped:
            self.visited.discard(h)
        return self.entries != before

    def next_unvisited(self):
        for _, h in self.entries:
            if h not in self.visited:
                return h
        return None

    def ids(self) -> list[int]:
        return [h for _, h in self.entries]


def pool_update(pool: CandidatePool, scored) -> bool:
    return pool.update(scored)


def recall_at_k(results, ground_truth, k: int) -> float:
    """Fraction of the first ``k`` true neighbors found in the first ``k`` results."""
    if k <= 0:
        raise ValueError("k must be positive")
    truth = [int(x) for x in list(ground_truth)[:k]]
    found = {int(x) for x in list(results)[:k]}
    return sum(1 for t in truth if t in found) / k


@dataclass
class SearchResult:
    ids: np.ndarray
    dists: np.ndarray
    hot_hits: int = 0
    cold_computes: int = 0
    promotions: int = 0
    expansions: int = 0
    fallbacks: int = 0
    latency_ms: float = 0.0
    modeled_cost: float = 0.0
    trace_len: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "ids": [int(x) for x in self.ids],
            "dists": [float(x) for x in self.dists],
            "latency_ms": self.latency_ms,
            "hot_hits": self.hot_hits,
            "cold_computes": self.cold_computes,
            "promotions": self.promotions,
            "expansions": self.expansions,
            "fallbacks": self.fallbacks,
            "modeled_cost": self.modeled_cost,
        }


def entry_points(live, n_entries: int, seed: int, query_id: int) -> np.ndarray:
    """Distinct random live ids, reproducible from (seed, query_id)."""
    ids, n = live.view()
    m = min(n_entries, n)
    if m <= 0:
        return np.zeros(0, dtype=np.int32)
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, int(query_id) & 0xFFFFFFFF])
    pick = rng.choice(n, m, replace=False)
    return np.ascontiguousarray(ids[pick], dtype=np.int32)


def traverse(index, query, L: int, entries: np.ndarray, stale: bool = False):
    """Run the kernel against the index's current arrays."""
    store, graph = index.store, index.graph
    vectors, lists, deleted = store.vectors, graph.lists, store.deleted
    q = np.ascontiguousarray(query, dtype=np.float32)
    if q.shape != (store.dim,):
        raise ValueError(f"query has shape {q.shape}, expected ({store.dim},)")
    hot = None
    if store.hot_capacity > 0:
        hot = (store.mapping, graph.hot_lists, graph.hot_version, graph.version, bool(stale))
    fetch = store.fetch_fn()
    on_disk = store.on_disk if fetch is not None else None
    seen, stamp = kernels.scratch.next_stamp(max(vectors.shape[0], lists.shape[0]))
    return kernels.beam_search(vectors, lists, deleted, entries, q, int(L), seen, stamp,
                               hot, on_disk, fetch)


def search_one(index, query, k: int, L: int, seed: int = 0, query_id: int = 0,
               account: bool = True) -> SearchResult:
    if k > L:
        raise ValueError(f"k={k} exceeds pool size L={L}")
    t0 = time.perf_counter()
    with index.phase.read():
        entries = entry_points(index.live, L, seed, query_id)
        if entries.size == 0:
            return SearchResult(np.zeros(0, np.int32), np.zeros(0), latency_ms=0.0)
        ids, dists, trace, expansions, fallbacks = traverse(
            index, query, L, entries, stale=not index.config.sync)
        delta = index.cache.process(trace) if account else np.zeros(6)
        if account:
            for shadow in index.shadows:
                shadow.process(trace)
    latency = (time.perf_counter() - t0) * 1e3
    hits, colds, promos = int(delta[0]), int(delta[1]), int(delta[2])
    return SearchResult(
        ids[:k], dists[:k], hits, colds, promos, expansions, fallbacks, latency,
        index.cost.cost(hits, colds, promos), int(trace.size))


def search_batch(index, queries, k: int, L: int, seed: int = 0, query_ids=None,
                 workers: int = 1) -> list[SearchResult]:
    """Independent per-query searches; query ``i`` uses ``(seed, query_ids[i])``."""
    queries = np.asarray(queries, dtype=np.float32)
    if queries.ndim == 1:
        queries = queries[None, :]
    if query_ids is None:
        query_ids = range(len(queries))
    query_ids = list(query_ids)
    if workers <= 1 or len(queries) <= 1:
        return [search_one(index, q, k, L, seed, qi) for q, qi in zip(queries, query_ids)]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda a: search_one(index, a[0], k, L, seed, a[1]),
                             zip(queries, query_ids)))
