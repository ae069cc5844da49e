"""Insertion, deletion, repair, consolidation and hot-tier synchronization."""
import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .graph import detour_reorder, sort_by_distance, sqdist_to
from .search import entry_points, traverse

NOT_TRIGGERED = "NOT_TRIGGERED"


class RepairQueue:
    """FIFO of live vertices whose deleted-neighbor fraction is too high."""

    def __init__(self, threshold: float = 0.5, fanout: int = 8):
        self.threshold = float(threshold)
        self.fanout = int(fanout)
        self._pending: OrderedDict[int, None] = OrderedDict()
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._pending)

    def __contains__(self, h):
        return int(h) in self._pending

    def ids(self) -> set[int]:
        with self._lock:
            return set(self._pending)

    def set_membership(self, h: int, member: bool):
        h = int(h)
        with self._lock:
            if member:
                if h not in self._pending:
                    self._pending[h] = None
            else:
                self._pending.pop(h, None)

    def pop(self):
        with self._lock:
            if not self._pending:
                return None
            return self._pending.popitem(last=False)[0]

    def reset(self, ids):
        with self._lock:
            self._pending = OrderedDict((int(h), None) for h in ids)


@dataclass
class Snapshot:
    lists: np.ndarray
    deleted: np.ndarray
    n: int


@dataclass
class ConsolidationReport:
    rebuilt: int = 0
    reclaimed: int = 0
    appended: int = 0
    triplets_applied: int = 0
    triplets_dropped: int = 0
    changed: int = 0
    log: list = field(default_factory=list)


class VersionSet:
    """Active graph plus at most ``bound - 1`` read-only snapshots."""

    def __init__(self, bound: int = 2):
        self.bound = int(bound)
        self.snapshot: Snapshot | None = None
        self.reverse_log: list[tuple[int, int, float]] = []
        self._log_lock = threading.Lock()

    @property
    def in_use(self) -> int:
        return 1 + (self.snapshot is not None)

    def can_snapshot(self) -> bool:
        return self.snapshot is None and self.in_use < self.bound

    def log(self, v: int, v_new: int, d: float):
        snap = self.snapshot
        if snap is not None and v <= snap.n < v_new:
            with self._log_lock:
                self.reverse_log.append((int(v), int(v_new), float(d)))


class UpdateEngine:
    """All mutating operations of a :class:`~tieredann.index.TieredIndex`."""

    def __init__(self, index):
        self.index = index
        cfg = index.config
        self.queue = RepairQueue(cfg.repair_threshold, cfg.repair_fanout)
        self.versions = VersionSet(cfg.version_bound)
        self.del_count = np.zeros(index.graph.lists.shape[0], dtype=np.int32)
        self.deleted_count = 0
        self.dirty: set[int] = set()
        self._dirty_lock = threading.Lock()
        self._count_lock = threading.Lock()
        self.repair_edge_work: list[int] = []
        self.sync_hook = None  # test hook run between copy and version check
        self._consolidation: ConsolidationReport | None = None
        self._consolidated: np.ndarray | None = None
        self._bg_thread: threading.Thread | None = None
        self.last_report: ConsolidationReport | None = None

    # -- bookkeeping ------------------------------------------------------
    def grow(self, capacity: int):
        if capacity + 1 > self.del_count.shape[0]:
            out = np.zeros(capacity + 1, dtype=np.int32)
            out[: self.del_count.shape[0]] = self.del_count
            self.del_count = out

    def _mark_dirty(self, ids):
        with self._dirty_lock:
            self.dirty.update(int(h) for h in ids)

    def _reevaluate(self, v: int):
        idx = self.index
        if idx.store.deleted[v]:
            self.queue.set_membership(v, False)
            return
        row = idx.graph.lists[v]
        nnz = int(np.count_nonzero(row))
        frac = self.del_count[v] / nnz if nnz else 0.0
        self.queue.set_membership(v, frac > self.queue.threshold)

    def commit(self, h: int, ids, locked: bool = False) -> int:
        """set_neighbors plus the derived state the update path maintains.

        ``ids`` come from internal computations and are not re-validated.
        """
        idx = self.index
        ver = idx.graph.set_neighbors(h, ids, locked=locked, trusted=True)
        row = idx.graph.lists[h]
        self.del_count[h] = int(idx.store.deleted[row[row > 0]].sum())
        self._reevaluate(h)
        with self._dirty_lock:
            self.dirty.add(int(h))
        return ver

    def deleted_fraction(self, v: int) -> float:
        row = self.index.graph.lists[v]
        row = row[row > 0]
        return float(self.index.store.deleted[row].mean()) if row.size else 0.0

    # -- insert -----------------------------------------------------------
    def insert(self, components) -> int:
        return self.link(self.reserve(components))

    def reserve(self, components) -> int:
        """Allocate an id for a vector without linking it into the graph.

        Lets a driver fix id order up front and link concurrently.
        """
        x = np.ascontiguousarray(components, dtype=np.float32)
        with self.index.phase.read():
            return self.index.allocate(x)

    def link(self, h: int) -> int:
        """Connect a reserved id to the graph and make it searchable."""
        idx = self.index
        h = int(h)
        with idx.phase.read():
            x = idx.store.vectors[h].copy()
            R = idx.graph.R
            n_live = len(idx.live)
            if n_live <= R:
                ids, _ = idx.live.view()
                cand = np.array(sorted(int(i) for i in ids[:n_live]), dtype=np.int64)
                if cand.size:
                    cand, _ = sort_by_distance(cand, sqdist_to(idx.store.vectors, cand, x))
                chosen = cand
            else:
                L = max(idx.config.L_insert, R)
                entries = entry_points(idx.live, L, idx.config.seed, -int(h))
                cand, _, _, _, _ = traverse(idx, x, L, entries)
                chosen = detour_reorder(cand, idx.graph.lists)[:R]
            self.commit(h, chosen)
            idx.live.add(h)
            self._add_reverse_edges(np.asarray(chosen, dtype=np.int64), h, x)
        return h

    def _add_reverse_edges(self, targets: np.ndarray, h: int, x: np.ndarray):
        """Append ``h`` to each target's list, dropping the farthest entry of
        a full list (``h`` itself may be the one dropped)."""
        if targets.size == 0:
            return
        idx = self.index
        graph, vectors = idx.graph, idx.store.vectors
        R = graph.R
        # decide every target from a row snapshot; rows that moved before the
        # final check are redone one by one under their locks
        rows = graph.lists[targets].copy()
        base = vectors[targets].astype(np.float64)
        diff = base - x.astype(np.float64)
        d_new = np.einsum("ij,ij->i", diff, diff)
        full = rows[:, R - 1] > 0
        row_d = kernels.row_dists(vectors, rows, targets)
        # farthest by (distance, id): among max-distance ties take the largest id
        maxd = row_d.max(axis=1)
        tie = row_d == maxd[:, None]
        far = np.where(tie, rows, -1).argmax(axis=1)
        far_id = rows[np.arange(rows.shape[0]), far]
        dropped_new = full & ((d_new > maxd) | ((d_new == maxd) & (h > far_id)))
        if self.versions.snapshot is not None:
            for u, dn in zip(targets.tolist(), d_new.tolist()):
                self.versions.log(u, h, dn)
        moved = np.any(graph.lists[targets] != rows, axis=1)
        for i in np.flatnonzero(~dropped_new | moved).tolist():
            u = int(targets[i])
            with graph.locks.write(u):
                cur = graph.lists[u]
                if moved[i] or not np.array_equal(cur, rows[i]):
                    self._reverse_edge_slow(u, h, float(d_new[i]))
                    continue
                nz = rows[i][rows[i] > 0]
                if full[i]:
                    new = np.append(np.delete(nz, far[i]), h)
                else:
                    new = np.append(nz, h)
                self.commit(u, new, locked=True)
        if graph.in_degree[h] == 0:
            # every target preferred its own neighbors; keep h reachable through
            # its nearest target anyway, evicting that list's farthest entry
            u = int(targets[np.lexsort((targets, d_new))[0]])
            with graph.locks.write(u):
                cur = graph.lists[u]
                nz = cur[cur > 0]
                if not np.any(nz == h):
                    if nz.size >= R:
                        ds = sqdist_to(vectors, nz, vectors[u])
                        nz = np.delete(nz, _farthest(nz, ds))
                    self.commit(u, np.append(nz, h), locked=True)

    def _reverse_edge_slow(self, u: int, h: int, d_new: float):
        """Same rule as above, recomputed from the current row (lock held)."""
        graph, vectors = self.index.graph, self.index.store.vectors
        cur = graph.lists[u]
        nz = cur[cur > 0]
        if np.any(nz == h):
            return
        if nz.size < graph.R:
            new = np.append(nz, h)
        else:
            ds = sqdist_to(vectors, nz, vectors[u])
            far = _farthest(nz, ds)
            if (d_new, h) >= (ds[far], int(nz[far])):
                return
            new = np.append(np.delete(nz, far), h)
        self.commit(u, new, locked=True)

    # -- delete -----------------------------------------------------------
    def delete(self, h: int) -> bool:
        """Lazy delete; returns False when ``h`` was already deleted."""
        idx = self.index
        h = int(h)
        with idx.phase.write():
            if not idx.store.mark_deleted(h):
                return False
            idx.live.remove(h)
            with self._count_lock:
                self.deleted_count += 1
            for shadow in idx.shadows:
                shadow.evict(h)
            d = idx.cache.evict(h)
            if d:
                idx.graph.invalidate_hot(d)
                idx.store.evict(d)
            self.queue.set_membership(h, False)
            for v in idx.graph.in_neighbors(h):
                self.del_count[v] += 1
                if not idx.store.deleted[v]:
                    self._reevaluate(v)
        return True

    # -- localized repair -------------------------------------------------
    def repair_affected(self, budget: int | None = None) -> int:
        idx = self.index
        budget = idx.config.repair_budget if budget is None else budget
        c = self.queue.fanout
        repaired = 0
        vectors, deleted = idx.store.vectors, idx.store.deleted
        with idx.phase.read():
            while repaired < budget:
                v = self.queue.pop()
                if v is None:
                    break
                if deleted[v]:
                    continue
                with idx.graph.locks.write(v):
                    row = idx.graph.lists[v]
                    row = row[row > 0]
                    live = row[deleted[row] == 0]
                    taken = set(live.tolist())
                    taken.add(v)
                    cands = []
                    for p in row[deleted[row] == 1].tolist():
                        out = idx.graph.lists[p]
                        picked = 0
                        for w in out.tolist():
                            if w == 0 or picked == c:
                                break
                            if deleted[w] or w in taken:
                                continue
                            taken.add(w)
                            cands.append(w)
                            picked += 1
                    self.repair_edge_work.append(len(cands))
                    pool = np.concatenate([live, np.asarray(cands, dtype=np.int32)]).astype(np.int64)
                    if pool.size:
                        pool, _ = sort_by_distance(pool, sqdist_to(vectors, pool, vectors[v]))
                    self.commit(v, pool[: idx.graph.R], locked=True)
                repaired += 1
        return repaired

    # -- consolidation ----------------------------------------------------
    def deletion_ratio(self) -> float:
        live = len(self.index.live)
        total = self.deleted_count + live
        return self.deleted_count / total if total else 0.0

    def should_consolidate(self) -> bool:
        return (self.deletion_ratio() > self.index.config.consolidation_threshold
                and self.versions.can_snapshot())

    def begin_consolidation(self) -> bool:
        """Take a snapshot if the trigger holds; returns whether it did."""
        idx = self.index
        with idx.phase.write():
            if not self.should_consolidate():
                return False
            n = idx.graph.n_ids
            self.versions.snapshot = Snapshot(idx.graph.lists[: n + 1].copy(),
                                              idx.store.deleted[: n + 1].copy(), n)
            self.versions.reverse_log = []
            self._consolidation = ConsolidationReport()
            self._consolidated = None
        return True

    def run_consolidation(self):
        """Rebuild the snapshot's lists around its deleted vertices.

        Works on the snapshot only, so foreground operations are not blocked.
        """
        snap = self.versions.snapshot
        rep = self._consolidation
        vectors = self.index.store.vectors
        R = snap.lists.shape[1]
        lists, deleted = snap.lists, snap.deleted
        out = lists.copy()
        has_deleted = np.zeros(snap.n + 1, dtype=bool)
        nz = lists > 0
        has_deleted[1:] = (deleted[lists[1:]].astype(bool) & nz[1:]).any(axis=1)
        has_deleted &= deleted == 0
        for v in np.flatnonzero(has_deleted).tolist():
            row = lists[v]
            row = row[row > 0]
            dmask = deleted[row] == 1
            parts = [row[~dmask]]
            for p in row[dmask].tolist():
                pr = lists[p]
                parts.append(pr[(pr > 0) & (deleted[pr] == 0)])
            pool = np.unique(np.concatenate(parts)).astype(np.int64)
            pool = pool[pool != v]
            out[v] = 0
            if pool.size:
                pool, _ = sort_by_distance(pool, sqdist_to(vectors, pool, vectors[v]))
                out[v, : min(R, pool.size)] = pool[:R]
            rep.rebuilt += 1
        gone = np.flatnonzero(deleted[1:]) + 1
        out[gone] = 0
        rep.reclaimed = int(gone.size)
        self._consolidated = out

    def merge_versions(self) -> ConsolidationReport:
        """Fold the consolidated snapshot back into the active graph."""
        idx = self.index
        snap = self.versions.snapshot
        rep = self._consolidation
        if self._consolidated is None:
            self.run_consolidation()
        merged = self._consolidated
        vectors = idx.store.vectors
        graph = idx.graph
        R = graph.R
        with idx.phase.write():
            deleted = idx.store.deleted
            log = list(self.versions.reverse_log)
            for v, vn, d in log:
                if deleted[v]:
                    rep.triplets_dropped += 1
                    continue
                row = merged[v]
                row = row[row > 0]
                if np.any(row == vn):
                    continue
                if row.size < R:
                    new = np.append(row, vn)
                else:
                    ds = sqdist_to(vectors, row, vectors[v])
                    far = _farthest(row, ds)
                    if (d, vn) >= (ds[far], int(row[far])):
                        continue
                    new = np.append(np.delete(row, far), vn)
                merged[v] = 0
                merged[v, : new.size] = new
                rep.triplets_applied += 1
            n0 = snap.n
            current = graph.lists[: n0 + 1]
            changed = np.flatnonzero(np.any(current != merged, axis=1))
            if changed.size:
                graph.lists[changed] = merged[changed]
                graph.version[changed] += 1
            rep.changed = int(changed.size)
            rep.appended = int(graph.n_ids - n0)
            rep.log = log
            graph.rebuild_derived()
            self._rebuild_queue()
            self._mark_dirty(changed.tolist())
            self.versions.snapshot = None
            self.versions.reverse_log = []
            self._consolidated = None
            self._consolidation = None
        self.last_report = rep
        return rep

    def maybe_consolidate(self, background: bool = False):
        if not self.begin_consolidation():
            return NOT_TRIGGERED
        if background:
            def work():
                self.run_consolidation()
                self.merge_versions()
            self._bg_thread = threading.Thread(target=work, name="consolidation", daemon=True)
            self._bg_thread.start()
            return self._bg_thread
        self.run_consolidation()
        return self.merge_versions()

    def wait_consolidation(self):
        if self._bg_thread is not None:
            self._bg_thread.join()
            self._bg_thread = None

    def _rebuild_queue(self):
        idx = self.index
        n = idx.graph.n_ids
        lists = idx.graph.lists[1: n + 1]
        deleted = idx.store.deleted
        dc = (deleted[lists] * (lists > 0)).sum(axis=1).astype(np.int32)
        self.grow(idx.graph.capacity)
        self.del_count[:] = 0
        self.del_count[1: n + 1] = dc
        nnz = (lists > 0).sum(axis=1)
        frac = np.divide(dc, nnz, out=np.zeros(n, dtype=np.float64), where=nnz > 0)
        members = np.flatnonzero((frac > self.queue.threshold) & (deleted[1: n + 1] == 0)) + 1
        self.queue.reset(members.tolist())

    # -- hot-tier sync ----------------------------------------------------
    def sync_tiers(self, ids=None) -> int:
        """Refresh stale hot copies in batches; returns how many were copied."""
        idx = self.index
        if ids is None:
            with self._dirty_lock:
                ids, self.dirty = self.dirty, set()
        ids = sorted(int(h) for h in ids)
        graph, store = idx.graph, idx.store
        batch = max(1, idx.config.sync_batch)
        synced = 0
        for s in range(0, len(ids), batch):
            with idx.cache.lock:
                for h in ids[s:s + batch]:
                    d = int(store.mapping[h]) if h < store.mapping.shape[0] else 0
                    if d == 0 or graph.hot_version[d] == graph.version[h]:
                        continue
                    graph.copy_to_hot(h, d, between=self.sync_hook)
                    synced += 1
        return synced

    def maintain(self):
        """One maintenance tick: repair, consolidation check, sync."""
        cfg = self.index.config
        out = {"repaired": 0, "consolidated": False, "synced": 0}
        if cfg.repair:
            out["repaired"] = self.repair_affected()
        if cfg.consolidate:
            rep = self.maybe_consolidate()
            out["consolidated"] = rep is not NOT_TRIGGERED
        if cfg.sync:
            out["synced"] = self.sync_tiers()
        return out


def _farthest(ids: np.ndarray, dists: np.ndarray) -> int:
    """Position of the (distance, id)-largest entry."""
    order = np.lexsort((ids, dists))
    return int(order[-1])
