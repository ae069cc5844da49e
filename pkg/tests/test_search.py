import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_knn
from tieredann.config import IndexConfig
from tieredann.harness.groundtruth import ground_truth
from tieredann.index import TieredIndex
from tieredann.search import CandidatePool, entry_points, pool_update, recall_at_k


def _line_index(points, R=2, **kw):
    x = np.asarray(points, dtype=np.float32)[:, None]
    return TieredIndex.build(x, IndexConfig(R=R, **kw), hot_capacity=0)


def test_line_query_example():
    idx = _line_index([0, 1, 2, 3])
    r = idx.search(np.array([2.2], dtype=np.float32), k=1, L=4)
    assert r.ids.tolist() == [3]
    assert r.dists[0] == pytest.approx(0.04, abs=1e-6)
    idx.delete(3)
    r = idx.search(np.array([2.2], dtype=np.float32), k=1, L=4)
    assert r.ids.tolist() == [4]
    assert r.dists[0] == pytest.approx(0.64, abs=1e-6)


def test_exact_match_distance_zero(small_index, small_data):
    base, _ = small_data
    r = small_index.search(base[10], k=1, L=64)
    assert r.ids[0] == 11 and r.dists[0] == 0.0


def test_k_greater_than_L_rejected(small_index, small_data):
    with pytest.raises(ValueError):
        small_index.search(small_data[1][0], k=10, L=5)


def test_empty_live_set_gives_empty_results():
    idx = _line_index([0, 1, 2])
    for h in (1, 2, 3):
        idx.delete(h)
    r = idx.search(np.array([1.0], dtype=np.float32), k=1, L=4)
    assert r.ids.size == 0


def test_query_dimension_checked(small_index):
    with pytest.raises(ValueError):
        small_index.search(np.zeros(3, dtype=np.float32), k=1)


def test_pool_update_examples():
    p = CandidatePool(2)
    pool_update(p, [(1, 1.0), (2, 2.0)])
    assert pool_update(p, [(3, 1.5)]) is True
    assert p.entries == [(1.0, 1), (1.5, 3)]
    assert pool_update(p, [(4, 9.0)]) is False
    assert pool_update(p, [(3, 0.1)]) is False
    assert p.ids() == [1, 3]


def test_recall_examples():
    assert recall_at_k([1, 2, 3], [1, 2, 4], 3) == pytest.approx(2 / 3)
    assert recall_at_k([5, 6], [5, 6], 2) == 1.0
    assert recall_at_k([1, 2], [3, 4], 2) == 0.0
    assert recall_at_k([1], [1, 2], 2) == 0.5


def test_entry_points_distinct_live_and_seeded(small_index):
    a = entry_points(small_index.live, 64, seed=3, query_id=5)
    b = entry_points(small_index.live, 64, seed=3, query_id=5)
    c = entry_points(small_index.live, 64, seed=3, query_id=6)
    assert a.tolist() == b.tolist() and a.tolist() != c.tolist()
    assert len(set(a.tolist())) == 64
    small_index.delete(int(a[0]))
    d = entry_points(small_index.live, 2000, seed=3, query_id=5)
    assert d.size == len(small_index) and int(a[0]) not in d.tolist()


def test_high_beam_agrees_with_brute_force(small_data):
    base, queries = small_data
    idx = TieredIndex.build(base, IndexConfig(R=16), hot_capacity=400)
    by_id = np.vstack([np.zeros((1, base.shape[1]), np.float32), base])
    truth = ground_truth(by_id, range(1, 2001), queries, 10)
    res = idx.search_batch(queries, k=10, L=512)
    rec = np.mean([recall_at_k(r.ids, t, 10) for r, t in zip(res, truth)])
    assert rec >= 0.99


def test_ground_truth_matches_linear_scan(small_data):
    base, queries = small_data
    by_id = np.vstack([np.zeros((1, 16), np.float32), base[:300]])
    live = list(range(1, 301, 2))
    truth = ground_truth(by_id, live, queries[:10], 5)
    for q, t in zip(queries[:10], truth):
        assert t.tolist() == brute_knn(by_id, live, q, 5)


def test_cache_transparency_across_capacity_and_policy(small_data):
    base, queries = small_data
    n = 1000
    lists = TieredIndex.build(base[:n], IndexConfig(R=16), hot_capacity=0).graph.lists[: n + 1]
    outputs = []
    for M in (0, n // 5, n):
        for policy in ("wavp", "lru", "lfu", "lrfu"):
            idx = TieredIndex.build(base[:n], IndexConfig(R=16, policy=policy),
                                    hot_capacity=M, lists=lists.copy())
            res = idx.search_batch(queries[:30], k=10, L=32, seed=4)
            outputs.append(b"".join(r.ids.tobytes() + r.dists.tobytes() for r in res))
    assert len(set(outputs)) == 1


def test_deleted_ids_never_returned_under_interleaving(small_index, small_data):
    _, queries = small_data
    rng = np.random.default_rng(2)
    live = set(range(1, 1001))
    for step in range(300):
        if rng.random() < 0.5 and len(live) > 20:
            h = int(rng.choice(sorted(live)))
            small_index.delete(h)
            live.discard(h)
        else:
            r = small_index.search(queries[step % 100], k=10, L=32, query_id=step)
            assert set(r.ids.tolist()) <= live


def test_monotone_k_prefix(small_index, small_data):
    _, queries = small_data
    for i in range(20):
        a = small_index.search(queries[i], k=5, L=40, seed=1, query_id=i)
        b = small_index.search(queries[i], k=6, L=40, seed=1, query_id=i)
        assert b.ids[:5].tolist() == a.ids.tolist()


def test_batch_workers_match_serial(small_index, small_data):
    _, queries = small_data
    a = small_index.search_batch(queries[:40], k=10, L=32, seed=2)
    b = small_index.search_batch(queries[:40], k=10, L=32, seed=2, workers=4)
    assert [r.ids.tolist() for r in a] == [r.ids.tolist() for r in b]


def test_stats_reconcile_with_trace(small_index, small_data):
    _, queries = small_data
    r = small_index.search(queries[0], k=10, L=32)
    assert r.hot_hits + r.cold_computes + r.promotions == r.trace_len
    assert r.modeled_cost == r.hot_hits + 5 * r.cold_computes + 41 * r.promotions
    assert set(r.to_json()) >= {"ids", "dists", "latency_ms", "hot_hits"}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 16))
def test_results_sorted_and_distances_exact(seed, k):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(60, 3)).astype(np.float32)
    idx = TieredIndex.build(x, IndexConfig(R=6), hot_capacity=10)
    q = rng.normal(size=3).astype(np.float32)
    r = idx.search(q, k=k, L=16, seed=seed % 1000)
    pairs = list(zip(r.dists.tolist(), r.ids.tolist()))
    assert pairs == sorted(pairs)
    for h, d in zip(r.ids, r.dists):
        assert d == pytest.approx(float(((x[h - 1].astype(np.float64) - q) ** 2).sum()))
