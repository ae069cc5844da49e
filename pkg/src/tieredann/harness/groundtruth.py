"""Exhaustive nearest-neighbor oracle, plus an incremental variant for fixed query sets."""
import numpy as np


def _topk(d: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Row-wise k smallest of ``d`` (columns labelled by ``ids``), ties by id."""
    n = d.shape[1]
    k = min(k, n)
    out = np.zeros((d.shape[0], k), dtype=np.int64)
    if k == 0:
        return out
    for i in range(d.shape[0]):
        row = d[i]
        if k < n:
            # everything strictly below the k-th value, plus ties at it
            kth = np.partition(row, k - 1)[k - 1]
            cand = np.flatnonzero(row <= kth)
        else:
            cand = np.arange(n)
        order = np.lexsort((ids[cand], row[cand]))[:k]
        out[i] = ids[cand[order]]
    return out


def ground_truth(vectors_by_id: np.ndarray, live_ids, queries, k: int,
                 block: int = 4096) -> list[np.ndarray]:
    """Exact top-k live ids per query (squared L2, ties to the lower id).

    ``vectors_by_id`` is indexed by id (row 0 unused). Returns at most
    ``len(live_ids)`` ids per query.
    """
    live = np.asarray(sorted(int(h) for h in live_ids), dtype=np.int64)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if live.size == 0:
        return [np.zeros(0, dtype=np.int64) for _ in range(len(queries))]
    base = np.asarray(vectors_by_id, dtype=np.float64)[live]
    out = []
    for s in range(0, len(queries), block):
        q = queries[s:s + block]
        d = np.stack([((base - row) ** 2).sum(axis=1) for row in q])
        out.extend(_topk(d, live, k))
    return out


class IncrementalGroundTruth:
    """Per-query exact distances to every live vector, updated on insert/delete.

    Distances are computed once per inserted vector by direct differences, so
    results match :func:`ground_truth` exactly.
    """

    def __init__(self, queries, k: int, capacity: int = 1024):
        self.queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        self.k = k
        self.d = np.full((len(self.queries), capacity + 1), np.inf)
        self.alive = np.zeros(capacity + 1, dtype=bool)

    def _grow(self, h: int):
        cap = self.d.shape[1]
        if h < cap:
            return
        new = max(h + 1, 2 * cap)
        d = np.full((self.d.shape[0], new), np.inf)
        d[:, :cap] = self.d
        alive = np.zeros(new, dtype=bool)
        alive[:cap] = self.alive
        self.d, self.alive = d, alive

    def add(self, ids, vectors):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size == 0:
            return
        self._grow(int(ids.max()))
        v = np.asarray(vectors, dtype=np.float64)
        nq, dim = self.queries.shape
        step = max(1, (1 << 22) // max(1, nq * dim))
        for s in range(0, ids.size, step):
            diff = self.queries[:, None, :] - v[None, s:s + step, :]
            self.d[:, ids[s:s + step]] = np.einsum("qnd,qnd->qn", diff, diff)
        self.alive[ids] = True

    def remove(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        self.alive[ids] = False
        self.d[:, ids] = np.inf

    def n_live(self) -> int:
        return int(self.alive.sum())

    def topk(self, rows=None) -> list[np.ndarray]:
        live = np.flatnonzero(self.alive)
        d = self.d[:, live] if rows is None else self.d[np.asarray(rows)][:, live]
        return list(_topk(d, live, self.k))
