import threading

import numpy as np
import pytest

from tieredann.config import IndexConfig
from tieredann.index import TieredIndex
from tieredann.update import NOT_TRIGGERED


def _sq(a, b):
    return float(((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2).sum())


def _custom(points, lists_by_id, R, **kw):
    x = np.asarray(points, dtype=np.float32).reshape(len(points), -1)
    lists = np.zeros((len(points) + 1, R), dtype=np.int32)
    for h, row in lists_by_id.items():
        lists[h, : len(row)] = row
    return TieredIndex.build(x, IndexConfig(R=R, **kw), hot_capacity=0, lists=lists)


def _full_scan_queue(idx):
    n = idx.graph.n_ids
    out = set()
    for v in range(1, n + 1):
        if idx.store.deleted[v]:
            continue
        row = idx.graph.lists[v]
        row = row[row > 0]
        if row.size and idx.store.deleted[row].mean() > 0.5:
            out.add(v)
    return out


# -- insert ---------------------------------------------------------------

def test_insert_into_empty_index_is_searchable():
    idx = TieredIndex(3, IndexConfig(R=4))
    h = idx.insert([1.0, 2.0, 3.0])
    r = idx.search(np.array([1, 2, 3], dtype=np.float32), k=1, L=1)
    assert r.ids.tolist() == [h] and r.dists[0] == 0.0


def test_bootstrap_fully_connects_first_vectors():
    idx = TieredIndex(2, IndexConfig(R=3))
    rng = np.random.default_rng(0)
    for _ in range(4):
        idx.insert(rng.normal(size=2))
    for h in range(1, 5):
        assert set(idx.graph.lists[h][idx.graph.lists[h] > 0].tolist()) == set(range(1, 5)) - {h}


def test_insert_line_example():
    # points 0, 1, 3, 4 are ids 1..4; inserting 2 gives id 5
    idx = TieredIndex.build(np.array([[0], [1], [3], [4]], dtype=np.float32),
                            IndexConfig(R=2), hot_capacity=0)
    h = idx.insert([2.0])
    assert h == 5
    assert set(idx.graph.lists[5].tolist()) == {2, 3}
    assert 5 in idx.graph.lists[2].tolist() and 5 in idx.graph.lists[3].tolist()


def test_insert_dimension_mismatch(small_index):
    with pytest.raises(ValueError):
        small_index.insert(np.zeros(5))


def test_reverse_edges_follow_drop_farthest(small_index, small_data):
    base, _ = small_data
    idx = small_index
    R = idx.graph.R
    for i in range(1000, 1100):
        before = idx.graph.lists.copy()
        h = idx.insert(base[i])
        x = idx.store.vectors[h]
        for u in idx.graph.lists[h][idx.graph.lists[h] > 0].tolist():
            row = idx.graph.lists[u]
            row = row[row > 0]
            assert row.size <= R
            if h in row.tolist():
                continue
            # h was refused: u's list is unchanged and full of nearer entries
            old = before[u][before[u] > 0]
            assert sorted(row.tolist()) == sorted(old.tolist())
            dn = _sq(x, idx.store.vectors[u])
            assert all((_sq(idx.store.vectors[w], idx.store.vectors[u]), w) < (dn, h)
                       for w in row.tolist())
    assert np.array_equal(idx.graph.in_degree, idx.graph.recount_in_degree())


def test_inserted_vertex_has_an_in_edge(small_index, small_data):
    base, _ = small_data
    for i in range(1000, 1200):
        h = small_index.insert(base[i])
        assert small_index.graph.in_degree[h] >= 1


def test_concurrent_inserts_and_searches(small_index, small_data):
    base, queries = small_data
    idx = small_index
    errors = []

    def inserter(lo):
        try:
            for i in range(lo, lo + 100):
                idx.insert(base[i])
        except Exception as e:  # pragma: no cover
            errors.append(e)

    def searcher():
        try:
            for q in queries[:50]:
                idx.search(q, k=10, L=32)
        except Exception as e:  # pragma: no cover
            errors.append(e)

    ts = [threading.Thread(target=inserter, args=(lo,)) for lo in (1000, 1100, 1200)]
    ts += [threading.Thread(target=searcher) for _ in range(2)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert not errors
    assert len(idx) == 1300
    assert np.array_equal(idx.graph.in_degree, idx.graph.recount_in_degree())
    for h in range(1, 1301):
        row = idx.graph.lists[h]
        nz = row[row > 0]
        assert len(set(nz.tolist())) == nz.size and h not in nz


# -- delete -----------------------------------------------------------------

def test_delete_threshold_rule():
    pts = [[float(i)] for i in range(10)]
    idx = _custom(pts, {1: [2, 3, 4, 5], 6: [7, 8, 9, 10]}, R=4)
    for h in (2, 3, 4):
        idx.delete(h)
    assert 1 in idx.updates.queue
    for h in (7, 8):
        idx.delete(h)
    assert 6 not in idx.updates.queue


def test_delete_is_idempotent(small_index):
    assert small_index.delete(5) is True
    assert small_index.delete(5) is False
    assert small_index.updates.deleted_count == 1


def test_deleted_vertex_leaves_hot_tier(small_index):
    h = int(small_index.store.rev_mapping[1])
    assert h
    small_index.delete(h)
    assert small_index.store.mapping[h] == 0
    assert small_index.cache.mapping[h] == 0


def test_repair_queue_matches_full_scan_under_fuzz(small_index):
    rng = np.random.default_rng(7)
    order = rng.permutation(np.arange(1, 1001))
    for i, h in enumerate(order[:600].tolist()):
        small_index.delete(h)
        if i % 50 == 0:
            assert small_index.updates.queue.ids() == _full_scan_queue(small_index)
    assert small_index.updates.queue.ids() == _full_scan_queue(small_index)


# -- repair -------------------------------------------------------------------

def test_repair_example():
    # v=1 at 0; p=2 deleted; a=3, b=4 live; N_out(p) = {5, 6, 7}; c=2
    pts = [[0.0], [0.5], [3.0], [-2.0], [1.0], [-1.5], [0.2]]
    idx = _custom(pts, {1: [2, 3, 4], 2: [5, 6, 7]}, R=4, repair_fanout=2)
    idx.delete(2)
    idx.updates.queue.set_membership(1, True)
    assert idx.updates.repair_affected() == 1
    cands = [3, 4, 5, 6]
    expect = sorted(cands, key=lambda w: (_sq(pts[w - 1], pts[0]), w))
    assert idx.graph.lists[1].tolist() == expect


def test_repair_with_all_candidates_deleted():
    pts = [[0.0], [0.5], [3.0], [1.0], [2.0]]
    idx = _custom(pts, {1: [2, 3], 2: [4, 5]}, R=4)
    for h in (4, 5, 2):
        idx.delete(h)
    idx.updates.queue.set_membership(1, True)
    idx.updates.repair_affected()
    assert idx.graph.lists[1].tolist() == [3, 0, 0, 0]


def test_repair_excludes_self_and_duplicates():
    pts = [[0.0], [0.5], [3.0], [1.0]]
    idx = _custom(pts, {1: [2, 3], 2: [1, 3, 4]}, R=4)
    idx.delete(2)
    idx.updates.queue.set_membership(1, True)
    idx.updates.repair_affected()
    assert idx.graph.lists[1].tolist() == [4, 3, 0, 0]


def test_repair_edge_work_bound(small_index):
    rng = np.random.default_rng(1)
    for h in rng.choice(np.arange(1, 1001), 450, replace=False).tolist():
        small_index.delete(h)
    small_index.updates.repair_affected(budget=10_000)
    c, R = small_index.config.repair_fanout, small_index.graph.R
    assert small_index.updates.repair_edge_work
    assert max(small_index.updates.repair_edge_work) <= c * R


def test_repair_skips_vertex_deleted_while_queued():
    pts = [[float(i)] for i in range(6)]
    idx = _custom(pts, {1: [2, 3]}, R=2)
    idx.updates.queue.set_membership(1, True)
    idx.delete(1)
    assert idx.updates.repair_affected() == 0


# -- consolidation ------------------------------------------------------------

def _line_index(n=100, **kw):
    x = np.arange(n, dtype=np.float32)[:, None]
    return TieredIndex.build(x, IndexConfig(R=4, **kw), hot_capacity=0)


def test_consolidation_trigger_boundary():
    idx = _line_index()
    for h in range(1, 21):
        idx.delete(h)
    assert idx.updates.maybe_consolidate() == NOT_TRIGGERED
    idx.delete(21)
    rep = idx.updates.maybe_consolidate()
    assert rep != NOT_TRIGGERED and rep.reclaimed == 21


def test_consolidation_deferred_at_version_bound():
    idx = _line_index(version_bound=1)
    for h in range(1, 40):
        idx.delete(h)
    assert idx.updates.maybe_consolidate() == NOT_TRIGGERED


def test_consolidation_at_rest_leaves_no_deleted_edges(small_index):
    rng = np.random.default_rng(3)
    dead = rng.choice(np.arange(1, 1001), 300, replace=False)
    for h in dead.tolist():
        small_index.delete(h)
    rep = small_index.updates.maybe_consolidate()
    assert rep != NOT_TRIGGERED
    g, deleted = small_index.graph, small_index.store.deleted
    for v in range(1, 1001):
        if not deleted[v]:
            row = g.lists[v]
            assert not deleted[row[row > 0]].any()
        else:
            assert not g.lists[v].any()
    assert np.array_equal(g.in_degree, g.recount_in_degree())
    assert small_index.updates.queue.ids() == _full_scan_queue(small_index)


def test_merge_applies_or_dominates_every_triplet(small_index, small_data):
    base, _ = small_data
    idx = small_index
    for h in range(1, 260):
        idx.delete(h)
    assert idx.updates.begin_consolidation()
    new_ids = [idx.insert(base[i]) for i in range(1000, 1060)]
    rep = idx.updates.merge_versions()
    assert rep.appended == 60 and rep.log
    vec = idx.store.vectors
    for v, vn, d in rep.log:
        if idx.store.deleted[v]:
            continue
        row = idx.graph.lists[v]
        row = row[row > 0].tolist()
        if vn in row:
            continue
        assert len(row) == idx.graph.R
        assert all((_sq(vec[w], vec[v]), w) < (d, vn) for w in row)
    for h in new_ids:
        assert idx.graph.lists[h].any()
    assert idx.updates.versions.snapshot is None


def test_identity_merge_without_concurrent_work():
    idx = _line_index()
    for h in range(1, 30):
        idx.delete(h)
    assert idx.updates.begin_consolidation()
    idx.updates.run_consolidation()
    expect = idx.updates._consolidated.copy()
    rep = idx.updates.merge_versions()
    assert rep.appended == 0 and rep.log == []
    assert np.array_equal(idx.graph.lists[:101], expect)


def test_background_consolidation(small_index, small_data):
    base, queries = small_data
    for h in range(1, 260):
        small_index.delete(h)
    t = small_index.updates.maybe_consolidate(background=True)
    assert t != NOT_TRIGGERED
    for i in range(1000, 1030):
        small_index.insert(base[i])
        small_index.search(queries[i % 100], k=10, L=32)
    small_index.updates.wait_consolidation()
    assert small_index.updates.last_report is not None
    deleted = small_index.store.deleted
    for r in small_index.search_batch(queries[:20], k=10, L=32):
        assert not deleted[r.ids].any()


# -- sync ---------------------------------------------------------------------

def test_sync_reconciles_versions(small_index):
    idx = small_index
    d = 1
    h = int(idx.store.rev_mapping[d])
    row = idx.graph.lists[h]
    for _ in range(2):
        idx.updates.commit(h, row[row > 0][:-1])
    assert idx.graph.hot_version[d] < idx.graph.version[h]
    assert idx.updates.sync_tiers([h]) == 1
    assert idx.graph.hot_version[d] == idx.graph.version[h]
    assert idx.graph.hot_lists[d].tolist() == idx.graph.lists[h].tolist()


def test_sync_skips_uncached(small_index):
    h = next(v for v in range(1, 1001) if small_index.store.mapping[v] == 0)
    small_index.updates.commit(h, [])
    assert small_index.updates.sync_tiers([h]) == 0


def test_sync_retries_when_main_advances(small_index):
    idx = small_index
    h = int(idx.store.rev_mapping[1])
    idx.updates.commit(h, idx.graph.lists[h][idx.graph.lists[h] > 0][:3])
    fired = []

    def hook(v):
        if not fired:
            fired.append(v)
            idx.graph.set_neighbors(v, idx.graph.lists[v][idx.graph.lists[v] > 0][:2])

    idx.updates.sync_hook = hook
    idx.updates.sync_tiers([h])
    assert fired == [h]
    assert idx.graph.hot_version[1] == idx.graph.version[h]
    assert idx.graph.hot_lists[1].tolist() == idx.graph.lists[h].tolist()


def test_maintain_reports(small_index):
    for h in range(1, 300):
        small_index.delete(h)
    out = small_index.maintain()
    assert out["consolidated"] is True
    assert set(out) == {"repaired", "consolidated", "synced"}


def test_save_load_roundtrip(small_index, tmp_path, small_data):
    _, queries = small_data
    for h in (3, 4, 5):
        small_index.delete(h)
    small_index.save(str(tmp_path / "idx"))
    other = TieredIndex.load(str(tmp_path / "idx"))
    assert len(other) == len(small_index)
    a = small_index.search_batch(queries[:10], k=10, L=32)
    b = other.search_batch(queries[:10], k=10, L=32)
    assert [r.ids.tolist() for r in a] == [r.ids.tolist() for r in b]
