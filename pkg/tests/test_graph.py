import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tieredann.graph import (GraphError, InvalidNeighbors, VersionedGraph, build_graph,
                             detour_reorder, exact_knn)


def _line(points):
    v = np.zeros((len(points) + 1, 1), dtype=np.float32)
    v[1:, 0] = points
    return v


def _brute_knn(vectors, h, pool, k):
    # oracle: sort (distance, id) over the pool with a plain Python loop
    cands = sorted((float(((vectors[u] - vectors[h]) ** 2).sum()), u) for u in pool if u != h)
    return [u for _, u in cands[:k]]


def _recount(g):
    c = np.zeros(g.lists.shape[0], dtype=np.int64)
    for h in range(1, g.n_ids + 1):
        for u in g.lists[h]:
            if u:
                c[u] += 1
    return c


def test_build_line_neighbors():
    lists = build_graph(_line([0, 1, 2, 3, 4]), R=2)
    # point 2 is id 3; its two nearest are points 1 and 3
    assert set(lists[3].tolist()) == {2, 4}


def test_build_pads_when_fewer_than_R():
    lists = build_graph(_line([0, 1, 2]), R=4)
    for h in (1, 2, 3):
        assert np.count_nonzero(lists[h]) == 2
        assert list(lists[h][2:]) == [0, 0]


def test_partition_merge_finds_cross_partition_neighbor():
    v = _line(range(10))
    lists = build_graph(v, R=2, partitions=[range(1, 6), range(6, 11)])
    # point 4 (id 5) should pick up point 5 (id 6) from the other partition
    assert 6 in lists[5].tolist()
    assert 3 not in lists[5].tolist()
    assert set(lists[5].tolist()) == set(_brute_knn(v, 5, range(1, 11), 2))


def test_build_matches_brute_force_single_partition():
    rng = np.random.default_rng(3)
    v = np.zeros((201, 5), dtype=np.float32)
    v[1:] = rng.normal(size=(200, 5))
    lists = build_graph(v, R=6)
    for h in range(1, 201):
        assert set(lists[h].tolist()) == set(_brute_knn(v, h, range(1, 201), 6))


def test_exact_knn_order_and_ties():
    v = _line([0, 1, -1, 2])
    out = exact_knn(v, np.arange(1, 5), 3)
    # from 0: ids 2 and 3 tie at distance 1, lower id first
    assert out[0].tolist() == [2, 3, 4]


def test_build_is_deterministic():
    rng = np.random.default_rng(5)
    v = np.zeros((301, 4), dtype=np.float32)
    v[1:] = rng.normal(size=(300, 4))
    parts = [range(1, 151), range(151, 301)]
    a = build_graph(v, R=8, seed=9, partitions=parts)
    b = build_graph(v, R=8, seed=9, partitions=parts)
    assert a.tobytes() == b.tobytes()


def test_build_rejects_empty_and_small_R():
    with pytest.raises(GraphError):
        build_graph(np.zeros((1, 3), dtype=np.float32))
    with pytest.raises(ValueError):
        build_graph(_line([0, 1, 2]), R=1)


def test_detour_reorder_examples():
    lists = np.zeros((4, 2), dtype=np.int32)
    lists[1] = [2, 0]
    assert detour_reorder([1, 2, 3], lists).tolist() == [1, 3, 2]
    assert detour_reorder([3, 2, 1], np.zeros((4, 2), dtype=np.int32)).tolist() == [3, 2, 1]
    assert detour_reorder([2], lists).tolist() == [2]
    assert detour_reorder([], lists).tolist() == []


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 12).flatmap(lambda n: st.tuples(
    st.permutations(list(range(1, n + 1))),
    st.lists(st.lists(st.integers(0, n), max_size=4), min_size=n + 1, max_size=n + 1))))
def test_detour_reorder_matches_counting_rule(args):
    cands, raw = args
    R = 4
    lists = np.zeros((len(raw), R), dtype=np.int32)
    for h, row in enumerate(raw):
        row = [x for x in dict.fromkeys(row) if x and x != h]
        lists[h, : len(row)] = row
    counts = []
    for i, c in enumerate(cands):
        counts.append(sum(c in set(lists[cands[j]].tolist()) for j in range(i)))
    expect = [c for _, _, c in sorted(zip(counts, range(len(cands)), cands))]
    assert detour_reorder(cands, lists).tolist() == expect


def _graph(n=6, R=4):
    g = VersionedGraph(R, capacity=n)
    for h in range(1, n + 1):
        g.register(h)
    return g


def test_set_neighbors_versions_and_padding():
    g = _graph()
    for _ in range(2):
        g.set_neighbors(1, [2])
    v = g.set_neighbors(1, [2, 3])
    assert v == 3
    ids, ver = g.neighbors(1)
    assert ids.tolist() == [2, 3, 0, 0] and ver == 3
    assert g.set_neighbors(1, [2, 3, 4, 5]) == 4


def test_set_neighbors_rejections_leave_version():
    g = _graph()
    g.set_neighbors(1, [2, 3])
    for bad in ([1, 2], [2, 2], [9], [2, 3, 4, 5, 6]):
        with pytest.raises(InvalidNeighbors):
            g.set_neighbors(1, bad)
    assert g.neighbors(1)[1] == 1


def test_neighbors_of_unknown_vertex():
    g = _graph()
    with pytest.raises(GraphError):
        g.neighbors(0)
    with pytest.raises(GraphError):
        g.neighbors(7)


def test_shrinking_list_updates_in_degree():
    g = _graph()
    g.set_neighbors(1, [2, 3, 4, 5])
    g.set_neighbors(1, [2, 3])
    assert g.in_degree[4] == 0 and g.in_degree[5] == 0
    assert np.array_equal(g.in_degree, _recount(g))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 30), st.lists(st.integers(1, 30), max_size=6)),
                max_size=80))
def test_in_degree_and_reverse_index_match_recount(ops):
    g = _graph(30, R=6)
    for h, ids in ops:
        ids = [x for x in dict.fromkeys(ids) if x != h]
        g.set_neighbors(h, ids)
        assert (g.lists[1:31] > 0).sum(axis=1).max() <= 6
    assert np.array_equal(g.in_degree, _recount(g))
    for u in range(1, 31):
        expect = sorted(h for h in range(1, 31) if u in g.lists[h].tolist())
        assert sorted(g.in_neighbors(u)) == expect
    g.rebuild_derived()
    assert np.array_equal(g.in_degree, _recount(g))


def test_reverse_index_overflow():
    g = _graph(20, R=2)
    for h in range(2, 20):
        g.set_neighbors(h, [1])
    assert sorted(g.in_neighbors(1)) == list(range(2, 20))
    for h in range(2, 12):
        g.set_neighbors(h, [])
    assert sorted(g.in_neighbors(1)) == list(range(12, 20))
    assert g.in_degree[1] == 8


def test_concurrent_reads_never_torn():
    g = _graph(10, R=4)
    a, b = [2, 3, 4, 5], [6, 7, 8, 9]
    g.set_neighbors(1, a)
    stop = threading.Event()
    bad = []

    def writer():
        i = 0
        while not stop.is_set():
            g.set_neighbors(1, b if i % 2 == 0 else a)
            i += 1

    t = threading.Thread(target=writer)
    t.start()
    for _ in range(3000):
        ids, _ = g.neighbors(1)
        if ids.tolist() not in (a, b):
            bad.append(ids.tolist())
    stop.set()
    t.join()
    assert not bad


def test_copy_to_hot_retries_on_concurrent_write():
    g = VersionedGraph(4, capacity=6, hot_capacity=2)
    for h in range(1, 7):
        g.register(h)
    g.set_neighbors(1, [2, 3])
    fired = []

    def race(h):
        if not fired:
            fired.append(1)
            g.set_neighbors(h, [4, 5])

    v = g.copy_to_hot(1, 1, between=race)
    ids, hv = g.neighbors_hot(1)
    assert v == hv == g.version[1]
    assert ids.tolist() == g.lists[1].tolist() == [4, 5, 0, 0]


def test_hot_slot_freshness_property():
    rng = np.random.default_rng(1)
    g = VersionedGraph(4, capacity=20, hot_capacity=5)
    for h in range(1, 21):
        g.register(h)
    slot_of = {}
    for _ in range(500):
        h = int(rng.integers(1, 21))
        if rng.random() < 0.5:
            ids = [x for x in rng.choice(np.arange(1, 21), 3, replace=False) if x != h]
            g.set_neighbors(h, ids)
        else:
            d = int(rng.integers(1, 6))
            g.copy_to_hot(h, d)
            slot_of[d] = h
        for d, owner in slot_of.items():
            assert g.hot_version[d] <= g.version[owner]
            if g.hot_version[d] == g.version[owner]:
                assert g.hot_lists[d].tolist() == g.lists[owner].tolist()


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    v = np.zeros((51, 3), dtype=np.float32)
    v[1:] = rng.normal(size=(50, 3))
    g = VersionedGraph(5, capacity=50)
    g.load_lists(build_graph(v, R=5))
    p = tmp_path / "g.graph"
    g.save(str(p), dim=3)
    raw = p.read_bytes()
    assert raw[:4] == b"TAGR"
    g2, dim = VersionedGraph.load(str(p))
    assert dim == 3 and g2.R == 5 and g2.n_ids == 50
    assert np.array_equal(g2.lists[1:51], g.lists[1:51])
    assert np.array_equal(g2.in_degree, g.in_degree)


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "x.graph"
    p.write_bytes(b"nope" + b"\0" * 16)
    with pytest.raises(GraphError):
        VersionedGraph.load(str(p))
