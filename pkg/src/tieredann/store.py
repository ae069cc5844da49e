"""Tiered vector storage: a bounded hot slab, a growable main table and an
optional file-backed spill segment.

Identifiers are 1-based; 0 is the NONE sentinel for both host ids and hot
slot ids.
"""
import enum
import os
import threading

import numpy as np


class Tier(enum.Enum):
    HOT = "HOT"
    MAIN = "MAIN"
    DISK = "DISK"


class StoreError(Exception):
    pass


class DimensionMismatch(StoreError, ValueError):
    pass


class CapacityExhausted(StoreError):
    pass


class NotFound(StoreError, KeyError):
    pass


class TieredStore:
    def __init__(self, dim: int, hot_capacity: int = 0, max_vectors: int | None = None,
                 spill_path: str | None = None, initial_capacity: int = 1024,
                 n_segments: int = 16):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = int(dim)
        self.hot_capacity = int(hot_capacity)
        self.max_vectors = max_vectors
        cap = max(int(initial_capacity), 1)
        self.vectors = np.zeros((cap + 1, dim), dtype=np.float32)
        self.deleted = np.zeros(cap + 1, dtype=np.uint8)
        self.mapping = np.zeros(cap + 1, dtype=np.int32)
        self.on_disk = np.zeros(cap + 1, dtype=np.uint8)
        self.hot_vectors = np.zeros((self.hot_capacity + 1, dim), dtype=np.float32)
        self.rev_mapping = np.zeros(self.hot_capacity + 1, dtype=np.int32)
        self.n_allocated = 0
        self._alloc_lock = threading.Lock()
        self._segments = [threading.Lock() for _ in range(max(1, n_segments))]
        self._spill_path = spill_path
        self._spill_dir: dict[int, int] = {}
        self._spill_lock = threading.Lock()
        self._spill_file = None
        self._growth_hooks = []

    # -- allocation -------------------------------------------------------
    @property
    def capacity(self) -> int:
        return self.vectors.shape[0] - 1

    def on_growth(self, fn):
        """Register ``fn(new_capacity)`` to run whenever the id space grows."""
        self._growth_hooks.append(fn)

    def _grow(self, need: int):
        cap = self.capacity
        while cap < need:
            cap *= 2
        if self.max_vectors is not None:
            cap = min(cap, self.max_vectors)
        n = cap + 1
        vec = np.zeros((n, self.dim), dtype=np.float32)
        vec[: self.vectors.shape[0]] = self.vectors
        self.vectors = vec
        self.deleted = _extend(self.deleted, n)
        self.mapping = _extend(self.mapping, n)
        self.on_disk = _extend(self.on_disk, n)
        for fn in self._growth_hooks:
            fn(cap)

    def reserve(self, n: int):
        with self._alloc_lock:
            if n > self.capacity:
                self._grow(n)

    def alloc_vector(self, components) -> int:
        return int(self.alloc_many(np.asarray(components, dtype=np.float32)[None, :])[0])

    def alloc_many(self, rows) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float32)
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise DimensionMismatch(f"expected dimension {self.dim}, got {rows.shape[-1]}")
        with self._alloc_lock:
            first = self.n_allocated + 1
            last = self.n_allocated + len(rows)
            if self.max_vectors is not None and last > self.max_vectors:
                raise CapacityExhausted(f"store is full ({self.max_vectors} vectors)")
            if last > self.capacity:
                self._grow(last)
            self.vectors[first:last + 1] = rows
            self.n_allocated = last
        return np.arange(first, last + 1, dtype=np.int64)

    def _check(self, h: int):
        if not 1 <= h <= self.n_allocated:
            raise NotFound(f"unknown id {h}")

    # -- reads ------------------------------------------------------------
    def get_vector(self, h: int):
        """Return ``(components, tier)`` for ``h``; components is a copy."""
        h = int(h)
        self._check(h)
        d = int(self.mapping[h])
        if d > 0:
            return self.hot_vectors[d].copy(), Tier.HOT
        if self.on_disk[h]:
            return self.read_spilled(h), Tier.DISK
        return self.vectors[h].copy(), Tier.MAIN

    def is_deleted(self, h: int) -> bool:
        self._check(int(h))
        return bool(self.deleted[h])

    def mark_deleted(self, h: int) -> bool:
        """Set the deletion bit; returns False if it was already set."""
        h = int(h)
        self._check(h)
        if self.deleted[h]:
            return False
        self.deleted[h] = 1
        return True

    def is_cached(self, h: int) -> bool:
        return bool(self.mapping[h] > 0)

    def n_cached(self) -> int:
        return int(np.count_nonzero(self.rev_mapping[1:]))

    # -- hot tier ---------------------------------------------------------
    def segment_lock(self, d: int):
        return self._segments[int(d) % len(self._segments)]

    def _check_slot(self, d: int):
        if not 1 <= d <= self.hot_capacity:
            raise StoreError(f"hot slot {d} out of range [1, {self.hot_capacity}]")

    def promote(self, h: int, d: int, replace: bool = False):
        """Copy ``h`` into hot slot ``d``.

        An occupied slot is rejected unless ``replace`` is set, in which case
        the occupant is evicted as part of the same step.
        """
        h, d = int(h), int(d)
        self._check(h)
        self._check_slot(d)
        with self.segment_lock(d):
            occupant = int(self.rev_mapping[d])
            if occupant and not replace:
                raise StoreError(f"hot slot {d} is occupied by {occupant}")
            old = int(self.mapping[h])
            if old and old != d:
                raise StoreError(f"id {h} is already cached at slot {old}")
            if occupant and occupant != h:
                self.mapping[occupant] = 0
            self.hot_vectors[d] = self.read_spilled(h) if self.on_disk[h] else self.vectors[h]
            self.rev_mapping[d] = h
            self.mapping[h] = d

    def evict(self, d: int) -> int:
        d = int(d)
        self._check_slot(d)
        with self.segment_lock(d):
            h = int(self.rev_mapping[d])
            if h == 0:
                raise StoreError(f"hot slot {d} is free")
            self.mapping[h] = 0
            self.rev_mapping[d] = 0
        return h

    # -- spill tier -------------------------------------------------------
    @property
    def spill_enabled(self) -> bool:
        return self._spill_path is not None

    def _spill_handle(self):
        if self._spill_file is None:
            self._spill_file = open(self._spill_path, "w+b")
        return self._spill_file

    def demote_to_disk(self, ids) -> int:
        if not self.spill_enabled:
            raise StoreError("no spill file configured")
        ids = [int(h) for h in ids]
        for h in ids:
            self._check(h)
            if self.mapping[h]:
                raise StoreError(f"id {h} is hot; evict it first")
        count = 0
        with self._spill_lock:
            f = self._spill_handle()
            for h in ids:
                if self.on_disk[h]:
                    continue
                off = self._spill_dir.get(h)
                if off is None:
                    f.seek(0, os.SEEK_END)
                    off = f.tell()
                    self._spill_dir[h] = off
                f.seek(off)
                f.write(self.vectors[h].astype("<f4").tobytes())
                count += 1
            f.flush()
            for h in ids:
                if not self.on_disk[h]:
                    self.on_disk[h] = 1
                    self.vectors[h] = 0.0
        return count

    def read_spilled(self, h: int) -> np.ndarray:
        with self._spill_lock:
            f = self._spill_handle()
            f.seek(self._spill_dir[int(h)])
            buf = f.read(self.dim * 4)
        return np.frombuffer(buf, dtype="<f4").astype(np.float32)

    def fetch_fn(self):
        """Vector fetcher for the search kernel, or None if nothing is spilled."""
        if not self._spill_dir:
            return None
        return self.read_spilled

    def close(self):
        if self._spill_file is not None:
            self._spill_file.close()
            self._spill_file = None


def _extend(arr, n):
    out = np.zeros((n,) + arr.shape[1:], dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out
