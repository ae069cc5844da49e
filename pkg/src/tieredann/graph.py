"""Fixed-degree proximity graph with versioned neighbor lists."""
import struct
import threading

import numpy as np

from . import kernels
from .locks import StripedLocks

GRAPH_MAGIC = b"TAGR"
GRAPH_FORMAT = 1
_HEADER = struct.Struct("<4sIIII")


class GraphError(Exception):
    pass


class InvalidNeighbors(GraphError, ValueError):
    pass


class VersionedGraph:
    """Main-tier lists plus hot-tier copies, each stamped with a version.

    ``lists[h]`` holds up to ``R`` neighbor ids, compacted to the front with
    trailing zeros. ``version[h]`` grows by one on every committed write.
    ``hot_lists[d]`` / ``hot_version[d]`` are the copies held in hot slot
    ``d``; a free slot has version -1 so it never looks fresh.
    """

    def __init__(self, R: int, capacity: int = 1024, hot_capacity: int = 0,
                 n_stripes: int = 1024):
        if R < 1:
            raise ValueError("R must be positive")
        self.R = int(R)
        n = max(int(capacity), 1) + 1
        self.lists = np.zeros((n, R), dtype=np.int32)
        self.version = np.zeros(n, dtype=np.int64)
        self.in_degree = np.zeros(n, dtype=np.int32)
        self.hot_lists = np.zeros((hot_capacity + 1, R), dtype=np.int32)
        self.hot_version = np.full(hot_capacity + 1, -1, dtype=np.int64)
        # in-neighbor index: fixed-width rows with an overflow map
        self._rev_width = 2 * R
        self.rev = np.zeros((n, self._rev_width), dtype=np.int32)
        self.rev_len = np.zeros(n, dtype=np.int32)
        self.rev_overflow: dict[int, set] = {}
        self._rev_lock = threading.Lock()
        self.locks = StripedLocks(n_stripes)
        self.n_ids = 0

    # -- sizing -----------------------------------------------------------
    @property
    def capacity(self) -> int:
        return self.lists.shape[0] - 1

    def grow(self, capacity: int):
        if capacity <= self.capacity:
            return
        n = capacity + 1
        self.lists = _extend(self.lists, n)
        self.version = _extend(self.version, n)
        self.in_degree = _extend(self.in_degree, n)
        with self._rev_lock:
            self.rev = _extend(self.rev, n)
            self.rev_len = _extend(self.rev_len, n)

    def register(self, h: int):
        """Make ``h`` a known vertex (with an empty list)."""
        if h > self.capacity:
            self.grow(max(h, 2 * self.capacity))
        if h > self.n_ids:
            self.n_ids = int(h)

    def _check(self, h: int):
        if not 1 <= h <= self.n_ids:
            raise GraphError(f"unknown vertex {h}")

    # -- reads ------------------------------------------------------------
    def neighbors(self, h: int):
        """Consistent ``(ids, version)`` snapshot of the main-tier list."""
        h = int(h)
        self._check(h)
        while True:
            v = int(self.version[h])
            row = self.lists[h].copy()
            if int(self.version[h]) == v:
                return row, v

    def neighbors_hot(self, d: int):
        d = int(d)
        if not 1 <= d < self.hot_lists.shape[0]:
            raise GraphError(f"unknown hot slot {d}")
        while True:
            v = int(self.hot_version[d])
            row = self.hot_lists[d].copy()
            if int(self.hot_version[d]) == v:
                return row, v

    def live_neighbors(self, h: int) -> np.ndarray:
        row = self.lists[h]
        return row[row > 0]

    def in_neighbors(self, h: int) -> list[int]:
        with self._rev_lock:
            out = self.rev[h, : self.rev_len[h]].tolist()
            extra = self.rev_overflow.get(int(h))
            if extra:
                out.extend(extra)
        return out

    # -- writes -----------------------------------------------------------
    def validate(self, h: int, ids) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64).ravel()
        ids = ids[ids != 0]
        if ids.size > self.R:
            raise InvalidNeighbors(f"{ids.size} neighbors exceeds degree {self.R}")
        if ids.size:
            if np.any(ids == h):
                raise InvalidNeighbors(f"self-loop on {h}")
            if np.any(ids < 1) or np.any(ids > self.n_ids):
                raise InvalidNeighbors("unknown neighbor id")
            if np.unique(ids).size != ids.size:
                raise InvalidNeighbors("duplicate neighbor id")
        return ids

    def set_neighbors(self, h: int, ids, locked: bool = False, trusted: bool = False) -> int:
        """Replace the list of ``h``; returns the new version.

        Pass ``locked=True`` when the caller already holds ``h``'s write lock,
        and ``trusted=True`` to skip validation for lists built internally.
        """
        h = int(h)
        if not trusted:
            self._check(h)
            ids = self.validate(h, ids)
        if locked:
            return self._commit(h, ids)
        with self.locks.write(h):
            return self._commit(h, ids)

    def _commit(self, h: int, ids) -> int:
        new = [int(x) for x in ids]
        row = np.zeros(self.R, dtype=np.int32)
        row[: len(new)] = new
        old = self.lists[h]
        old_set = set(old[old > 0].tolist())
        new_set = set(new)
        removed = old_set - new_set
        added = new_set - old_set
        self.lists[h] = row
        self.version[h] += 1
        deg = self.in_degree
        with self._rev_lock:
            for u in removed:
                deg[u] -= 1
                self._rev_remove(u, h)
            for u in added:
                deg[u] += 1
                self._rev_add(u, h)
        return int(self.version[h])

    def _rev_add(self, u: int, h: int):
        n = self.rev_len[u]
        if n < self._rev_width:
            self.rev[u, n] = h
            self.rev_len[u] = n + 1
        else:
            self.rev_overflow.setdefault(u, set()).add(h)

    def _rev_remove(self, u: int, h: int):
        n = int(self.rev_len[u])
        row = self.rev[u]
        hit = np.flatnonzero(row[:n] == h)
        if hit.size:
            i = int(hit[0])
            row[i] = row[n - 1]
            row[n - 1] = 0
            self.rev_len[u] = n - 1
            extra = self.rev_overflow.get(u)
            if extra:
                row[n - 1] = extra.pop()
                self.rev_len[u] = n
                if not extra:
                    del self.rev_overflow[u]
        else:
            extra = self.rev_overflow.get(u)
            if extra is not None:
                extra.discard(h)
                if not extra:
                    del self.rev_overflow[u]

    def load_lists(self, lists: np.ndarray):
        """Bulk-install lists for ids 1..n and rebuild derived state."""
        n = lists.shape[0] - 1
        self.register(n)
        self.lists[: n + 1] = lists
        self.version[1: n + 1] += 1
        self.rebuild_derived()

    def rebuild_derived(self):
        """Recompute in-degree counters and the in-neighbor index from scratch."""
        n = self.n_ids
        flat = self.lists[1: n + 1]
        owners = np.repeat(np.arange(1, n + 1, dtype=np.int32), self.R)
        targets = flat.ravel()
        keep = targets > 0
        owners, targets = owners[keep], targets[keep]
        deg = np.bincount(targets, minlength=self.lists.shape[0]).astype(np.int32)
        with self._rev_lock:
            self.in_degree[:] = deg[: self.lists.shape[0]]
            self.rev[:] = 0
            self.rev_len[:] = 0
            self.rev_overflow = {}
            order = np.argsort(targets, kind="stable")
            t_sorted, o_sorted = targets[order], owners[order]
            starts = np.searchsorted(t_sorted, np.arange(self.lists.shape[0]))
            counts = deg
            rank = np.arange(t_sorted.size) - starts[t_sorted]
            fit = rank < self._rev_width
            self.rev[t_sorted[fit], rank[fit]] = o_sorted[fit]
            self.rev_len[:] = np.minimum(counts, self._rev_width)
            for t, o in zip(t_sorted[~fit].tolist(), o_sorted[~fit].tolist()):
                self.rev_overflow.setdefault(t, set()).add(o)

    def recount_in_degree(self) -> np.ndarray:
        flat = self.lists[1: self.n_ids + 1].ravel()
        return np.bincount(flat[flat > 0], minlength=self.lists.shape[0]).astype(np.int32)

    # -- hot copies -------------------------------------------------------
    def copy_to_hot(self, h: int, d: int, between=None) -> int:
        """Copy ``h``'s main list into hot slot ``d``, retrying if ``h`` is
        written mid-copy. ``between`` is a test hook run between the copy and
        the version re-check. Returns the version installed."""
        while True:
            v = int(self.version[h])
            row = self.lists[h].copy()
            if between is not None:
                between(h)
            if int(self.version[h]) == v:
                self.hot_version[d] = -1
                self.hot_lists[d] = row
                self.hot_version[d] = v
                return v

    def invalidate_hot(self, d: int):
        self.hot_version[d] = -1

    # -- persistence ------------------------------------------------------
    def save(self, path: str, dim: int):
        n = self.n_ids
        with open(path, "wb") as f:
            f.write(_HEADER.pack(GRAPH_MAGIC, dim, self.R, n, GRAPH_FORMAT))
            f.write(self.lists[1: n + 1].astype("<u4").tobytes())

    @classmethod
    def load(cls, path: str, hot_capacity: int = 0):
        with open(path, "rb") as f:
            magic, dim, R, n, fmt = _HEADER.unpack(f.read(_HEADER.size))
            if magic != GRAPH_MAGIC or fmt != GRAPH_FORMAT:
                raise GraphError(f"{path}: not a graph file")
            body = np.frombuffer(f.read(n * R * 4), dtype="<u4")
        if body.size != n * R:
            raise GraphError(f"{path}: truncated")
        g = cls(R, capacity=max(n, 1), hot_capacity=hot_capacity)
        lists = np.zeros((n + 1, R), dtype=np.int32)
        lists[1:] = body.reshape(n, R).astype(np.int32)
        g.load_lists(lists)
        return g, dim


def _extend(arr, n):
    out = np.zeros((n,) + arr.shape[1:], dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


# -- construction ---------------------------------------------------------

def detour_reorder(candidates, lists) -> np.ndarray:
    """Reorder candidates (nearest first) by how many earlier candidates
    already link to them; ties keep their original order."""
    cands = np.ascontiguousarray(candidates, dtype=np.int32)
    if cands.size <= 1:
        return cands.copy()
    pos = kernels.scratch.positions(lists.shape[0])
    counts = kernels.detour_counts(cands, lists, pos)
    return cands[np.argsort(counts, kind="stable")]


def sort_by_distance(ids: np.ndarray, dists: np.ndarray):
    order = np.lexsort((ids, dists))
    return ids[order], dists[order]


def sqdist_to(vectors: np.ndarray, ids, q) -> np.ndarray:
    rows = vectors[np.asarray(ids, dtype=np.int64)].astype(np.float64)
    diff = rows - np.asarray(q, dtype=np.float64)
    return np.einsum("ij,ij->i", diff, diff)


def exact_knn(vectors: np.ndarray, ids: np.ndarray, k: int, block: int = 1024) -> np.ndarray:
    """Exact k nearest neighbors of every id among ``ids`` (self excluded).

    ``vectors`` is indexed by id. Returns an (len(ids), k) array of ids in
    ascending (distance, id) order, zero-padded when fewer exist.
    """
    ids = np.asarray(ids, dtype=np.int64)
    n = ids.size
    k_eff = min(k, n - 1)
    out = np.zeros((n, k), dtype=np.int32)
    if k_eff <= 0:
        return out
    X = vectors[ids].astype(np.float32)
    sq = np.einsum("ij,ij->i", X, X, dtype=np.float64).astype(np.float32)
    extra = min(n - 1, k_eff + 8)
    for s in range(0, n, block):
        e = min(n, s + block)
        d = sq[s:e, None] - 2.0 * (X[s:e] @ X.T) + sq[None, :]
        d[np.arange(e - s), np.arange(s, e)] = np.inf
        if extra < n - 1:
            cand = np.argpartition(d, extra, axis=1)[:, :extra]
        else:
            cand = np.tile(np.arange(n), (e - s, 1))
        Xd = X[s:e].astype(np.float64)
        for r in range(e - s):
            c = cand[r]
            c = c[c != s + r]
            diff = X[c].astype(np.float64) - Xd[r]
            dd = np.einsum("ij,ij->i", diff, diff)
            cid = ids[c]
            order = np.lexsort((cid, dd))[:k_eff]
            out[s + r, :k_eff] = cid[order]
    return out


def build_graph(vectors: np.ndarray, R: int = 32, partition_size: int | None = 131072,
                seed: int = 0, L_build: int = 64, partitions=None) -> np.ndarray:
    """Build neighbor lists for ids 1..n of ``vectors`` (row 0 unused).

    Each partition gets exact kNN lists. With more than one partition, every
    vertex then searches each foreign partition's subgraph and keeps the R
    globally nearest candidates. Lists end up reordered by detour counts.
    """
    n = vectors.shape[0] - 1
    if n <= 0:
        raise GraphError("cannot build a graph over an empty dataset")
    if R < 2:
        raise ValueError("R must be at least 2")
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if partitions is None:
        size = n if not partition_size else max(int(partition_size), R + 1)
        partitions = [np.arange(s + 1, min(n, s + size) + 1) for s in range(0, n, size)]
    else:
        partitions = [np.asarray(p, dtype=np.int64) for p in partitions]
    lists = np.zeros((n + 1, R), dtype=np.int32)
    for part in partitions:
        lists[part] = exact_knn(vectors, part, R)
    if len(partitions) > 1:
        lists = _merge_partitions(vectors, lists, partitions, R, seed, L_build)
    out = np.zeros_like(lists)
    for h in range(1, n + 1):
        row = lists[h]
        row = row[row > 0]
        out[h, : row.size] = detour_reorder(row, lists)
    return out


def _merge_partitions(vectors, lists, partitions, R, seed, L_build):
    n = vectors.shape[0] - 1
    rng = np.random.default_rng(seed)
    deleted = np.zeros(n + 1, dtype=np.uint8)
    merged = lists.copy()
    seen, stamp = None, 0
    for pi, part in enumerate(partitions):
        others = [q for qi, q in enumerate(partitions) if qi != pi]
        for h in part.tolist():
            own = lists[h]
            own = own[own > 0]
            cid = [own]
            cd = [sqdist_to(vectors, own, vectors[h])]
            for q in others:
                m = min(L_build, q.size)
                entries = q[rng.choice(q.size, m, replace=False)].astype(np.int32)
                seen, stamp = kernels.scratch.next_stamp(n + 1)
                ids, dists, *_ = kernels.beam_search(
                    vectors, lists, deleted, entries, vectors[h], max(L_build, R), seen, stamp)
                cid.append(ids)
                cd.append(dists)
            ids, dists = sort_by_distance(np.concatenate(cid).astype(np.int64),
                                          np.concatenate(cd))
            merged[h] = 0
            merged[h, : min(R, ids.size)] = ids[:R]
    return merged
