"""Pure-Python implementations of the hot loops.

Same signatures and results as the compiled ``_ckernels`` module. Used when
the extension is not built, or when ``TIEREDANN_PURE_PYTHON=1`` is set.
"""
import heapq
import math
from bisect import bisect_left

import numpy as np

LRU, LFU, LRFU = 0, 1, 2


def beam_search(vectors, lists, deleted, entries, query, L, seen, stamp,
                hot=None, on_disk=None, fetch=None):
    n_rows = min(vectors.shape[0], lists.shape[0])
    q = np.asarray(query, dtype=np.float64)
    keys = []  # sorted (dist, id)
    visited = set()
    trace = []
    expansions = 0
    fallbacks = 0
    if hot is not None:
        hot_map, hot_lists, hot_version, main_version, stale = hot

    def score(batch):
        if not batch:
            return []
        ids = np.asarray(batch, dtype=np.int64)
        rows = vectors[ids].astype(np.float64)
        if on_disk is not None:
            for i, x in enumerate(batch):
                if on_disk[x]:
                    rows[i] = fetch(x)
        diff = rows - q
        return (diff * diff).sum(axis=1).tolist()

    def offer(batch):
        for x, d in zip(batch, score(batch)):
            key = (d, x)
            if len(keys) == L:
                if key >= keys[-1]:
                    continue
                visited.discard(keys.pop()[1])
            keys.insert(bisect_left(keys, key), key)

    batch = []
    for x in entries:
        x = int(x)
        if x <= 0 or x >= n_rows or deleted[x] or seen[x] == stamp:
            continue
        seen[x] = stamp
        batch.append(x)
    trace.extend(batch)
    offer(batch)

    while True:
        cur = next((x for _, x in keys if x not in visited), None)
        if cur is None:
            break
        visited.add(cur)
        expansions += 1
        dslot = 0
        if hot is not None and cur < hot_map.shape[0]:
            dslot = int(hot_map[cur])
        if dslot > 0 and (stale or hot_version[dslot] == main_version[cur]):
            row = hot_lists[dslot].tolist()
        else:
            if dslot > 0:
                fallbacks += 1
            row = lists[cur].tolist()
        batch = []
        for nb in row:
            if nb == 0:
                break
            if nb >= n_rows or deleted[nb] or seen[nb] == stamp:
                continue
            seen[nb] = stamp
            batch.append(nb)
        trace.extend(batch)
        offer(batch)

    ids = np.array([x for _, x in keys], dtype=np.int32)
    dists = np.array([d for d, _ in keys], dtype=np.float64)
    return ids, dists, np.array(trace, dtype=np.int32), expansions, fallbacks


def detour_counts(cands, lists, scratch):
    pos = {int(c): i for i, c in enumerate(cands)}
    counts = np.zeros(len(cands), dtype=np.int32)
    for j, c in enumerate(cands):
        for w in lists[c].tolist():
            if w == 0:
                break
            p = pos.get(w, -1)
            if p > j:
                counts[p] += 1
    return counts


def _predict(h, recent, in_degree, alpha, beta):
    return alpha * recent[h] + beta * math.log1p(float(in_degree[h]))


def _clock_sweep(M, clock, ref, rev_mapping, recent, in_degree, alpha, beta):
    c = clock
    cold = [s for s in range(1, M + 1) if ref[s] == 0]
    if cold:
        fmin = min(_predict(rev_mapping[s], recent, in_degree, alpha, beta) for s in cold)
    else:
        for _ in range(M):
            ref[c] = 0
            c = c % M + 1
        fmin = min(_predict(rev_mapping[s], recent, in_degree, alpha, beta)
                   for s in range(1, M + 1))
    while True:
        if ref[c] == 0:
            if _predict(rev_mapping[c], recent, in_degree, alpha, beta) == fmin:
                return c
        else:
            ref[c] = 0
        c = c % M + 1


def wavp_process(trace, start, stop, mapping, rev_mapping, ref, recent, in_degree,
                 free_stack, state, alpha, beta, theta, window_len, decay,
                 log_h, log_d, counters):
    M = rev_mapping.shape[0] - 1
    clock, n_free, count = (int(v) for v in state)
    nlog = 0
    for t in range(start, stop):
        h = int(trace[t])
        count += 1
        recent[h] += 1.0
        d = int(mapping[h])
        if d > 0:
            counters[0] += 1
            ref[d] = 1
        else:
            p = _predict(h, recent, in_degree, alpha, beta)
            counters[4] += 1
            counters[5] += p
            if p <= theta or M == 0:
                counters[1] += 1
            else:
                if n_free > 0:
                    n_free -= 1
                    d = int(free_stack[n_free])
                else:
                    d = _clock_sweep(M, clock, ref, rev_mapping, recent, in_degree, alpha, beta)
                    clock = d
                    mapping[rev_mapping[d]] = 0
                    counters[3] += 1
                mapping[h] = d
                rev_mapping[d] = h
                ref[d] = 1
                counters[2] += 1
                log_h[nlog] = h
                log_d[nlog] = d
                nlog += 1
        if window_len > 0 and count % window_len == 0:
            recent *= decay
    state[0], state[1], state[2] = clock, n_free, count
    return nlog


def baseline_process(policy, trace, start, stop, mapping, rev_mapping, free_stack,
                     state, slot_val, slot_last, slot_stamp, hk1, hk2, hslot, hstamp,
                     lam, log_h, log_d, counters):
    # the heap lives in the four arrays so state round-trips between backends
    M = rev_mapping.shape[0] - 1
    cap = hk1.shape[0]
    n_free, now, hsize = (int(v) for v in state)
    heap = [(float(hk1[i]), float(hk2[i]), int(hslot[i]), int(hstamp[i])) for i in range(hsize)]
    nlog = 0
    for t in range(start, stop):
        h = int(trace[t])
        now += 1
        d = int(mapping[h])
        if d > 0:
            counters[0] += 1
        elif M == 0:
            counters[1] += 1
            continue
        else:
            if n_free > 0:
                n_free -= 1
                d = int(free_stack[n_free])
            else:
                while True:
                    _, _, s, st = heap[0]
                    if st == slot_stamp[s] and rev_mapping[s] > 0:
                        break
                    heapq.heappop(heap)
                d = s
                mapping[rev_mapping[d]] = 0
                counters[3] += 1
            mapping[h] = d
            rev_mapping[d] = h
            slot_val[d] = 0.0
            slot_last[d] = now
            counters[2] += 1
            log_h[nlog] = h
            log_d[nlog] = d
            nlog += 1
        if policy == LRU:
            key = (float(now), 0.0)
        elif policy == LFU:
            slot_val[d] += 1.0
            key = (float(slot_val[d]), float(now))
        else:
            slot_val[d] = 1.0 + slot_val[d] * math.pow(2.0, -lam * float(now - slot_last[d]))
            key = (math.log2(slot_val[d]) + lam * float(now), float(now))
        slot_last[d] = now
        slot_stamp[d] += 1
        if len(heap) == cap:
            heap = [e for e in heap if e[3] == slot_stamp[e[2]] and rev_mapping[e[2]] > 0]
            heapq.heapify(heap)
        heapq.heappush(heap, (key[0], key[1], d, int(slot_stamp[d])))
    hsize = len(heap)
    for i, (a, b, s, st) in enumerate(heap):
        hk1[i], hk2[i], hslot[i], hstamp[i] = a, b, s, st
    state[0], state[1], state[2] = n_free, now, hsize
    return nlog


def row_dists(vectors, rows, owners):
    rows = np.asarray(rows)
    owners = np.asarray(owners, dtype=np.int64)
    diff = vectors[rows].astype(np.float64) - vectors[owners].astype(np.float64)[:, None, :]
    out = np.einsum("ijk,ijk->ij", diff, diff)
    out[rows == 0] = -np.inf
    return out
