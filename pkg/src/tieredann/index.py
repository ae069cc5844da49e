"""The streaming index: store + graph + placement policy + update engine."""
import json
import os
import threading

import numpy as np

from .cache import CostModel, make_policy
from .config import IndexConfig, dump_config, parse_config
from .graph import VersionedGraph, build_graph
from .locks import RWLock
from .search import search_batch, search_one
from .store import TieredStore
from .update import UpdateEngine
from .vecio import read_vecs, write_vecs


class LiveSet:
    """Live ids in a dense array (for O(1) sampling) with a position index."""

    def __init__(self, capacity: int = 1024):
        self.ids = np.zeros(max(capacity, 1), dtype=np.int32)
        self.pos = np.full(max(capacity, 1) + 1, -1, dtype=np.int64)
        self.n = 0
        self._lock = threading.Lock()

    def __len__(self):
        return self.n

    def __contains__(self, h):
        h = int(h)
        return h < self.pos.shape[0] and self.pos[h] >= 0

    def view(self):
        """``(array, count)``; the first ``count`` entries are live ids."""
        return self.ids, self.n

    def add(self, h: int):
        h = int(h)
        with self._lock:
            if h >= self.pos.shape[0]:
                pos = np.full(max(h + 1, 2 * self.pos.shape[0]), -1, dtype=np.int64)
                pos[: self.pos.shape[0]] = self.pos
                self.pos = pos
            if self.pos[h] >= 0:
                return
            if self.n == self.ids.shape[0]:
                ids = np.zeros(2 * self.ids.shape[0], dtype=np.int32)
                ids[: self.n] = self.ids[: self.n]
                self.ids = ids
            self.ids[self.n] = h
            self.pos[h] = self.n
            self.n += 1

    def remove(self, h: int):
        h = int(h)
        with self._lock:
            if h >= self.pos.shape[0] or self.pos[h] < 0:
                return
            i = int(self.pos[h])
            last = int(self.ids[self.n - 1])
            self.ids[i] = last
            self.pos[last] = i
            self.pos[h] = -1
            self.n -= 1

    def to_array(self) -> np.ndarray:
        return np.sort(self.ids[: self.n].copy())


class TieredIndex:
    def __init__(self, dim: int, config: IndexConfig | None = None, hot_capacity: int = 0,
                 initial_capacity: int = 1024):
        self.config = config or IndexConfig()
        cfg = self.config
        self.cost = CostModel(cfg.t_hot, cfg.t_cold, cfg.t_transfer)
        self.store = TieredStore(dim, hot_capacity, spill_path=cfg.spill_path,
                                 initial_capacity=initial_capacity)
        self.graph = VersionedGraph(cfg.R, capacity=initial_capacity, hot_capacity=hot_capacity)
        self.cache = self._make_cache(cfg.policy)
        # extra policies fed the same accesses without owning hot slots
        self.shadows: list = []
        self.live = LiveSet(initial_capacity)
        self.phase = RWLock()
        self.updates = UpdateEngine(self)
        self.store.on_growth(self._on_growth)

    # -- construction -----------------------------------------------------
    @classmethod
    def build(cls, vectors, config: IndexConfig | None = None, hot_capacity: int | None = None,
              lists: np.ndarray | None = None) -> "TieredIndex":
        """Build over ``vectors`` (row i becomes id i + 1)."""
        vectors = np.ascontiguousarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise ValueError("need a nonempty (n, d) array")
        cfg = config or IndexConfig()
        n, dim = vectors.shape
        M = cfg.hot_slots(n) if hot_capacity is None else int(hot_capacity)
        index = cls(dim, cfg, hot_capacity=M, initial_capacity=n)
        index.store.alloc_many(vectors)
        if lists is None:
            lists = build_graph(index.store.vectors[: n + 1], cfg.R, cfg.partition_size,
                                cfg.seed, cfg.L_build)
        index.graph.load_lists(lists)
        for h in range(1, n + 1):
            index.live.add(h)
        index.cache.grow(n)
        if cfg.warm_up and cfg.policy == "wavp" and M > 0:
            index.cache.warm_up(range(1, n + 1))
        return index

    def _make_cache(self, policy: str, installer="own"):
        cfg = self.config
        return make_policy(policy, self.store.hot_capacity, self.store.capacity, self.graph,
                           self.cost, alpha=cfg.alpha, beta=cfg.beta, window_len=cfg.window_len,
                           decay=cfg.decay, adaptive=cfg.theta_adaptive,
                           lrfu_lambda=cfg.lrfu_lambda,
                           installer=self._install if installer == "own" else installer)

    def add_shadow(self, policy: str):
        """Track another policy on the same access stream (bookkeeping only).

        Search results never depend on placement, so a shadow's counters are
        what a separate run under that policy would report.
        """
        shadow = self._make_cache(policy, installer=None)
        shadow.grow(self.store.n_allocated)
        if self.config.warm_up and policy == "wavp" and self.store.hot_capacity > 0:
            shadow.warm_up(self.live.to_array())
        self.shadows.append(shadow)
        return shadow

    def policies(self) -> list:
        return [self.cache, *self.shadows]

    def set_policy(self, policy: str, warm_up: bool | None = None):
        """Swap the placement policy, emptying the hot tier."""
        for d in range(1, self.store.hot_capacity + 1):
            if self.store.rev_mapping[d]:
                self.store.evict(d)
            self.graph.invalidate_hot(d)
        self.config = self.config.replace(policy=policy)
        self.cache = self._make_cache(policy)
        self.cache.grow(self.store.n_allocated)
        warm = self.config.warm_up if warm_up is None else warm_up
        if warm and policy == "wavp" and self.store.hot_capacity > 0:
            self.cache.warm_up(self.live.to_array())

    def _install(self, h: int, d: int):
        self.graph.invalidate_hot(d)
        self.store.promote(h, d, replace=True)
        self.graph.copy_to_hot(h, d)

    def _on_growth(self, capacity: int):
        self.graph.grow(capacity)
        for c in self.policies():
            c.grow(capacity)
        self.updates.grow(capacity)

    def allocate(self, x) -> int:
        h = self.store.alloc_vector(x)
        self.graph.register(h)
        for c in self.policies():
            c.grow(h)
        self.updates.grow(self.graph.capacity)
        return h

    # -- operations -------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.store.dim

    def __len__(self):
        return len(self.live)

    def search(self, query, k: int = 10, L: int | None = None, seed: int = 0,
               query_id: int = 0):
        return search_one(self, query, k, L or self.config.L_search, seed, query_id)

    def search_batch(self, queries, k: int = 10, L: int | None = None, seed: int = 0,
                     query_ids=None, workers: int = 1):
        return search_batch(self, queries, k, L or self.config.L_search, seed, query_ids,
                            workers)

    def insert(self, x) -> int:
        return self.updates.insert(x)

    def delete(self, h: int) -> bool:
        return self.updates.delete(h)

    def maintain(self):
        return self.updates.maintain()

    def live_ids(self) -> np.ndarray:
        return self.live.to_array()

    # -- persistence ------------------------------------------------------
    def save(self, path: str):
        os.makedirs(path, exist_ok=True)
        n = self.store.n_allocated
        write_vecs(os.path.join(path, "vectors.fvecs"), self.store.vectors[1: n + 1])
        self.graph.save(os.path.join(path, "graph.bin"), self.dim)
        deleted = np.flatnonzero(self.store.deleted[1: n + 1]) + 1
        meta = {"n": n, "deleted": deleted.tolist(), "hot_capacity": self.store.hot_capacity}
        with open(os.path.join(path, "meta.json"), "w") as f:
            json.dump(meta, f)
        with open(os.path.join(path, "index.conf"), "w") as f:
            f.write(dump_config(self.config))

    @classmethod
    def load(cls, path: str, config: IndexConfig | None = None) -> "TieredIndex":
        with open(os.path.join(path, "meta.json")) as f:
            meta = json.load(f)
        if config is None:
            with open(os.path.join(path, "index.conf")) as f:
                config = parse_config(f.read())
        vectors = read_vecs(os.path.join(path, "vectors.fvecs"))
        graph, _ = VersionedGraph.load(os.path.join(path, "graph.bin"))
        lists = graph.lists[: graph.n_ids + 1]
        # the stored graph fixes the degree
        config = config.replace(R=graph.R)
        cfg = config.replace(warm_up=False)
        index = cls.build(vectors, cfg, hot_capacity=meta["hot_capacity"], lists=lists)
        for h in meta["deleted"]:
            index.store.mark_deleted(h)
            index.live.remove(h)
        index.updates.deleted_count = len(meta["deleted"])
        index.updates._rebuild_queue()
        index.config = config
        if config.warm_up and config.policy == "wavp" and index.store.hot_capacity > 0:
            index.cache.warm_up(index.live.to_array())
        return index
