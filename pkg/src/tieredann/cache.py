"""Hot-tier placement: workload-aware promotion plus LRU/LFU/LRFU baselines.

A placement policy sees the ordered stream of vector accesses produced by
search. It decides, on every miss, whether the vector is computed on the cold
path or promoted into a hot slot, and keeps the counters the cost model is
applied to. Policies never influence search results.
"""
import math
import threading
from dataclasses import dataclass

import numpy as np

from . import _pykernels, kernels

POLICIES = ("wavp", "lru", "lfu", "lrfu")
_BASELINE_CODES = {"lru": kernels.LRU, "lfu": kernels.LFU, "lrfu": kernels.LRFU}
# counter slots shared with the kernels
HITS, COLDS, PROMOTIONS, EVICTIONS, MISSES, SUM_MISS_PREDICT = range(6)


@dataclass
class CostModel:
    """Per-vector time units for the hot path, cold path and a promotion."""

    t_hot: float = 1.0
    t_cold: float = 5.0
    t_transfer: float = 40.0

    def __post_init__(self):
        if not (self.t_cold > self.t_hot > 0):
            raise ValueError("cost model needs t_cold > t_hot > 0")
        if not self.t_transfer > 0:
            raise ValueError("t_transfer must be positive")

    @property
    def rho(self) -> float:
        """Break-even access count for a promotion."""
        return self.t_transfer / (self.t_cold - self.t_hot)

    def gain(self, lam: float) -> float:
        # factored through rho so the sign is exactly that of lam - rho
        return (lam - self.rho) * (self.t_cold - self.t_hot)

    def cost(self, hits, colds, promotions) -> float:
        return hits * self.t_hot + colds * self.t_cold + promotions * (self.t_transfer + self.t_hot)


def predict_value(recent: float, in_degree: int, alpha: float, beta: float) -> float:
    return alpha * recent + beta * math.log1p(in_degree)


class PlacementPolicy:
    """State shared by every policy: a private id -> slot map and counters.

    ``installer(h, d)`` is called for each promotion after the mapping
    changes, so the owner can copy bytes into the hot slot.
    """

    name = "base"

    def __init__(self, hot_capacity: int, n_ids: int, cost: CostModel | None = None,
                 installer=None):
        self.M = int(hot_capacity)
        self.cost = cost or CostModel()
        self.installer = installer
        self.mapping = np.zeros(max(n_ids, 1) + 1, dtype=np.int32)
        self.rev_mapping = np.zeros(self.M + 1, dtype=np.int32)
        self.free_stack = np.arange(self.M, 0, -1, dtype=np.int32)
        self.n_free = self.M
        self.counters = np.zeros(6, dtype=np.float64)
        self.lock = threading.Lock()

    def grow(self, n_ids: int):
        if n_ids + 1 > self.mapping.shape[0]:
            self.mapping = _extend(self.mapping, n_ids + 1)

    def _ensure(self, trace):
        if trace.size and int(trace.max()) >= self.mapping.shape[0]:
            self.grow(max(int(trace.max()), 2 * (self.mapping.shape[0] - 1)))

    def _apply_log(self, log_h, log_d, n):
        if self.installer is None:
            return
        # slots may be reused within one chunk; replay in order
        for i in range(n):
            self.installer(int(log_h[i]), int(log_d[i]))

    def process(self, trace) -> np.ndarray:
        """Replay a batch of accesses; returns the counter deltas."""
        raise NotImplementedError

    def evict(self, h: int) -> int:
        """Drop ``h`` from the hot tier (used on delete); returns its slot."""
        with self.lock:
            d = int(self.mapping[h]) if h < self.mapping.shape[0] else 0
            if d:
                self._release(h, d)
            return d

    def _release(self, h, d):
        self.mapping[h] = 0
        self.rev_mapping[d] = 0
        self.free_stack[self.n_free] = d
        self.n_free += 1

    def n_cached(self) -> int:
        return int(np.count_nonzero(self.rev_mapping[1:]))

    def stats(self) -> dict:
        c = self.counters
        total = c[HITS] + c[COLDS] + c[PROMOTIONS]
        return {
            "policy": self.name,
            "hot_hits": int(c[HITS]),
            "cold_computes": int(c[COLDS]),
            "promotions": int(c[PROMOTIONS]),
            "evictions": int(c[EVICTIONS]),
            "accesses": int(total),
            "miss_rate": float((c[COLDS] + c[PROMOTIONS]) / total) if total else 0.0,
            "modeled_cost": float(self.cost.cost(c[HITS], c[COLDS], c[PROMOTIONS])),
        }


class WavpCache(PlacementPolicy):
    """Promote on a miss only when the predicted access count clears theta."""

    name = "wavp"

    def __init__(self, hot_capacity: int, n_ids: int, in_degree, cost: CostModel | None = None,
                 alpha: float = 0.6, beta: float = 0.4, window_len: int = 4096,
                 decay: float = 0.5, adaptive: bool = False, adapt_every: int = 10_000,
                 up_factor: float = 1.25, down_factor: float = 0.9, trailing: int = 8,
                 installer=None):
        super().__init__(hot_capacity, n_ids, cost, installer)
        if alpha < 0 or beta < 0 or alpha + beta <= 0:
            raise ValueError("alpha and beta must be nonnegative with a positive sum")
        self.alpha, self.beta = float(alpha), float(beta)
        self.window_len, self.decay = int(window_len), float(decay)
        # a graph object (whose arrays may be reallocated) or a plain array
        self._degree_source = in_degree
        self.recent = np.zeros(self.mapping.shape[0], dtype=np.float64)
        self.ref = np.zeros(self.M + 1, dtype=np.uint8)
        self.clock = 1
        self.access_count = 0
        self.theta = self.cost.rho
        self.adaptive = adaptive
        self.adapt_every = int(adapt_every)
        self.up_factor, self.down_factor = up_factor, down_factor
        self._miss_history: list[float] = []
        self._trailing = int(trailing)
        self._prev_mean_f: float | None = None
        self._window = np.zeros(6, dtype=np.float64)

    def grow(self, n_ids: int):
        super().grow(n_ids)
        if self.recent.shape[0] < self.mapping.shape[0]:
            self.recent = _extend(self.recent, self.mapping.shape[0])

    # -- statistics ---------------------------------------------------------
    def record_access(self, h: int):
        h = int(h)
        self.grow(h)
        self.recent[h] += 1.0
        self.access_count += 1
        d = int(self.mapping[h])
        if d:
            self.ref[d] = 1
        if self.window_len > 0 and self.access_count % self.window_len == 0:
            self.recent *= self.decay

    def predict(self, h: int) -> float:
        h = int(h)
        recent = float(self.recent[h]) if h < self.recent.shape[0] else 0.0
        deg = int(self.in_degree[h]) if h < self.in_degree.shape[0] else 0
        return predict_value(recent, deg, self.alpha, self.beta)

    def gain(self, lam: float) -> float:
        return self.cost.gain(lam)

    # -- placement ----------------------------------------------------------
    def place_on_miss(self, h: int) -> int:
        """Promote-or-compute-cold decision for one miss; returns the slot, or 0."""
        h = int(h)
        self.grow(h)
        with self.lock:
            if self.mapping[h]:
                raise ValueError(f"{h} is already cached")
            p = self.predict(h)
            if p <= self.theta or self.M == 0:
                return 0
            if self.n_free:
                self.n_free -= 1
                d = int(self.free_stack[self.n_free])
            else:
                d = _pykernels._clock_sweep(self.M, self.clock, self.ref, self.rev_mapping,
                                            self.recent, self._degree_view(), self.alpha,
                                            self.beta)
                self.clock = d
                self.mapping[self.rev_mapping[d]] = 0
            self.mapping[h] = d
            self.rev_mapping[d] = h
            self.ref[d] = 1
        if self.installer is not None:
            self.installer(h, d)
        return d

    @property
    def in_degree(self) -> np.ndarray:
        src = self._degree_source
        return src.in_degree if hasattr(src, "in_degree") else src

    def _degree_view(self):
        deg = self.in_degree
        if deg.shape[0] < self.recent.shape[0]:
            deg = _extend(deg, self.recent.shape[0])
        return np.ascontiguousarray(deg, dtype=np.int32)

    def process(self, trace) -> np.ndarray:
        trace = np.ascontiguousarray(trace, dtype=np.int32)
        self._ensure(trace)
        before = self.counters.copy()
        with self.lock:
            deg = self._degree_view()
            start = 0
            while start < trace.size:
                stop = trace.size
                if self.adaptive and self.adapt_every > 0:
                    left = self.adapt_every - (self.access_count % self.adapt_every)
                    stop = min(stop, start + left)
                w0 = self.counters.copy()
                self._run(trace, start, stop, deg)
                self._window += self.counters - w0
                if self.adaptive and self.access_count % self.adapt_every == 0:
                    self._close_window()
                start = stop
        return self.counters - before

    def _run(self, trace, start, stop, deg):
        log_h = np.empty(stop - start, dtype=np.int32)
        log_d = np.empty(stop - start, dtype=np.int32)
        state = np.array([self.clock, self.n_free, self.access_count], dtype=np.int64)
        n = kernels.wavp_process(trace, start, stop, self.mapping, self.rev_mapping, self.ref,
                                 self.recent, deg, self.free_stack, state, self.alpha,
                                 self.beta, self.theta, self.window_len, self.decay,
                                 log_h, log_d, self.counters)
        self.clock, self.n_free, self.access_count = (int(v) for v in state)
        self._apply_log(log_h, log_d, n)

    def _close_window(self):
        w = self._window
        total = w[HITS] + w[COLDS] + w[PROMOTIONS]
        if total:
            miss_rate = (w[COLDS] + w[PROMOTIONS]) / total
            mean_f = w[SUM_MISS_PREDICT] / w[MISSES] if w[MISSES] else 0.0
            self.adapt_theta(miss_rate, mean_f)
        self._window[:] = 0

    def adapt_theta(self, miss_rate: float, mean_f: float) -> float:
        """Update theta from one closed metrics window.

        Rising miss rate (above the trailing average) together with a rising
        mean prediction raises theta; a falling miss rate lowers it.
        """
        rho = self.cost.rho
        if self._miss_history:
            recent = self._miss_history[-self._trailing:]
            avg = sum(recent) / len(recent)
            if miss_rate > avg and self._prev_mean_f is not None and mean_f > self._prev_mean_f:
                self.theta = min(self.theta * self.up_factor, 4.0 * rho)
            elif miss_rate < avg:
                self.theta = max(self.theta * self.down_factor, rho / 4.0)
        self._miss_history.append(float(miss_rate))
        self._prev_mean_f = float(mean_f)
        return self.theta

    def warm_up(self, candidates, budget: int | None = None) -> list[int]:
        """Fill free slots with the highest-predicted candidates (ties: lower id)."""
        cand = np.asarray(sorted(int(h) for h in candidates), dtype=np.int64)
        if cand.size == 0:
            return []
        self.grow(int(cand.max()))
        budget = self.n_free if budget is None else min(int(budget), self.n_free)
        deg = self._degree_view()
        scores = self.alpha * self.recent[cand] + self.beta * np.log1p(deg[cand].astype(np.float64))
        order = np.lexsort((cand, -scores))[:budget]
        chosen = cand[order].tolist()
        for h in chosen:
            if self.mapping[h]:
                continue
            with self.lock:
                self.n_free -= 1
                d = int(self.free_stack[self.n_free])
                self.mapping[h] = d
                self.rev_mapping[d] = h
                self.ref[d] = 0
            if self.installer is not None:
                self.installer(h, d)
        return chosen

    def _release(self, h, d):
        super()._release(h, d)
        self.ref[d] = 0


class BaselineCache(PlacementPolicy):
    """Fetch-on-miss LRU, LFU or LRFU."""

    def __init__(self, policy: str, hot_capacity: int, n_ids: int,
                 cost: CostModel | None = None, lrfu_lambda: float = 0.1, installer=None):
        super().__init__(hot_capacity, n_ids, cost, installer)
        if policy not in _BASELINE_CODES:
            raise ValueError(f"unknown baseline policy {policy!r}")
        self.name = policy
        self.code = _BASELINE_CODES[policy]
        self.lam = float(lrfu_lambda)
        self.now = 0
        M = self.M
        self.slot_val = np.zeros(M + 1, dtype=np.float64)
        self.slot_last = np.zeros(M + 1, dtype=np.int64)
        self.slot_stamp = np.zeros(M + 1, dtype=np.int64)
        cap = 4 * M + 16
        self.hk1 = np.zeros(cap, dtype=np.float64)
        self.hk2 = np.zeros(cap, dtype=np.float64)
        self.hslot = np.zeros(cap, dtype=np.int32)
        self.hstamp = np.zeros(cap, dtype=np.int64)
        self.hsize = 0

    def process(self, trace) -> np.ndarray:
        trace = np.ascontiguousarray(trace, dtype=np.int32)
        self._ensure(trace)
        before = self.counters.copy()
        with self.lock:
            log_h = np.empty(trace.size, dtype=np.int32)
            log_d = np.empty(trace.size, dtype=np.int32)
            state = np.array([self.n_free, self.now, self.hsize], dtype=np.int64)
            n = kernels.baseline_process(self.code, trace, 0, trace.size, self.mapping,
                                         self.rev_mapping, self.free_stack, state,
                                         self.slot_val, self.slot_last, self.slot_stamp,
                                         self.hk1, self.hk2, self.hslot, self.hstamp,
                                         self.lam, log_h, log_d, self.counters)
            self.n_free, self.now, self.hsize = (int(v) for v in state)
            self._apply_log(log_h, log_d, n)
        return self.counters - before

    def baseline_place(self, h: int) -> int:
        """One access through the policy; returns the slot now holding ``h``."""
        self.process(np.array([h], dtype=np.int32))
        return int(self.mapping[h])

    def _release(self, h, d):
        super()._release(h, d)
        self.slot_stamp[d] += 1


def make_policy(name: str, hot_capacity: int, n_ids: int, in_degree, cost: CostModel | None = None,
                **kw) -> PlacementPolicy:
    name = name.lower()
    if name == "wavp":
        keep = {k: v for k, v in kw.items() if k not in ("lrfu_lambda",)}
        return WavpCache(hot_capacity, n_ids, in_degree, cost, **keep)
    keep = {k: v for k, v in kw.items() if k in ("lrfu_lambda", "installer")}
    return BaselineCache(name, hot_capacity, n_ids, cost, **keep)


def _extend(arr, n):
    out = np.zeros((n,) + arr.shape[1:], dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out
