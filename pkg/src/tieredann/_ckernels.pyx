# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.

Every function here has a pure-Python twin in ``_pykernels`` with the same
signature and the same observable behaviour; ``tieredann.kernels`` picks one
at import time.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log1p, log2, pow, INFINITY

cnp.import_array()

ctypedef cnp.int32_t i32
ctypedef cnp.int64_t i64
ctypedef cnp.float32_t f32
ctypedef cnp.float64_t f64
ctypedef cnp.uint8_t u8

cdef enum:
    LRU = 0
    LFU = 1
    LRFU = 2


cdef inline double _sqdist(const f32* a, const f32* b, Py_ssize_t d) noexcept nogil:
    cdef double s = 0.0
    cdef double t
    cdef Py_ssize_t i
    for i in range(d):
        t = <double>a[i] - <double>b[i]
        s += t * t
    return s


cdef inline bint _before(double da, i32 ha, double db, i32 hb) noexcept nogil:
    return da < db or (da == db and ha < hb)


cdef int _pool_insert(i32* ids, double* dists, u8* vis, int* size, int cap,
                      i32 h, double d) noexcept nogil:
    """Insert keeping (dist, id) order; returns the slot or -1 if rejected."""
    cdef int n = size[0]
    cdef int lo = 0
    cdef int hi = n
    cdef int mid, k
    if n == cap and not _before(d, h, dists[n - 1], ids[n - 1]):
        return -1
    while lo < hi:
        mid = (lo + hi) >> 1
        if _before(dists[mid], ids[mid], d, h):
            lo = mid + 1
        else:
            hi = mid
    if n == cap:
        n -= 1
    k = n
    while k > lo:
        ids[k] = ids[k - 1]
        dists[k] = dists[k - 1]
        vis[k] = vis[k - 1]
        k -= 1
    ids[lo] = h
    dists[lo] = d
    vis[lo] = 0
    size[0] = n + 1
    return lo


def beam_search(const f32[:, ::1] vectors, const i32[:, ::1] lists,
                const u8[::1] deleted, const i32[::1] entries,
                const f32[::1] query, int L, i32[::1] seen, int stamp,
                hot=None, const u8[::1] on_disk=None, fetch=None):
    """Greedy best-first traversal with a bounded candidate pool.

    Returns ``(ids, dists, trace, expansions, fallbacks)`` where ``trace`` is
    every id whose distance was computed, in evaluation order.
    """
    cdef Py_ssize_t dim = vectors.shape[1]
    cdef Py_ssize_t n_rows = min(vectors.shape[0], lists.shape[0])
    cdef int R = lists.shape[1]
    cdef int size = 0
    cdef int i, j, pos
    cdef i32 x, nb, dslot
    cdef double dist
    cdef Py_ssize_t e
    cdef int expansions = 0
    cdef int fallbacks = 0
    cdef bint use_hot = hot is not None
    cdef bint stale = False
    cdef bint check_disk = on_disk is not None
    cdef const i32[::1] hot_map
    cdef const i32[:, ::1] hot_lists
    cdef const i64[::1] hot_version
    cdef const i64[::1] main_version
    cdef const f32[::1] row_vec

    ids_arr = np.empty(L, dtype=np.int32)
    dists_arr = np.empty(L, dtype=np.float64)
    vis_arr = np.zeros(L, dtype=np.uint8)
    row_arr = np.empty(R, dtype=np.int32)
    cdef i32[::1] ids = ids_arr
    cdef f64[::1] dists = dists_arr
    cdef u8[::1] vis = vis_arr
    cdef i32[::1] row = row_arr

    cdef Py_ssize_t tcap = L + 16 * R
    trace_arr = np.empty(tcap, dtype=np.int32)
    cdef i32[::1] trace = trace_arr
    cdef Py_ssize_t nt = 0

    if use_hot:
        hot_map, hot_lists, hot_version, main_version, stale = hot

    for e in range(entries.shape[0]):
        x = entries[e]
        if x <= 0 or x >= n_rows or deleted[x] or seen[x] == stamp:
            continue
        seen[x] = stamp
        if check_disk and on_disk[x]:
            row_vec = fetch(x)
            dist = _sqdist(&row_vec[0], &query[0], dim)
        else:
            dist = _sqdist(&vectors[x, 0], &query[0], dim)
        if nt == tcap:
            tcap *= 2
            trace_arr = np.resize(trace_arr, tcap)
            trace = trace_arr
        trace[nt] = x
        nt += 1
        _pool_insert(&ids[0], &dists[0], &vis[0], &size, L, x, dist)

    while True:
        i = 0
        while i < size and vis[i]:
            i += 1
        if i == size:
            break
        vis[i] = 1
        x = ids[i]
        expansions += 1

        dslot = hot_map[x] if use_hot and x < hot_map.shape[0] else 0
        if dslot > 0 and (stale or hot_version[dslot] == main_version[x]):
            row[:] = hot_lists[dslot]
        else:
            if dslot > 0:
                fallbacks += 1
            row[:] = lists[x]

        for j in range(R):
            nb = row[j]
            if nb == 0:
                break
            if nb >= n_rows or deleted[nb] or seen[nb] == stamp:
                continue
            seen[nb] = stamp
            if check_disk and on_disk[nb]:
                row_vec = fetch(nb)
                dist = _sqdist(&row_vec[0], &query[0], dim)
            else:
                dist = _sqdist(&vectors[nb, 0], &query[0], dim)
            if nt == tcap:
                tcap *= 2
                trace_arr = np.resize(trace_arr, tcap)
                trace = trace_arr
            trace[nt] = nb
            nt += 1
            _pool_insert(&ids[0], &dists[0], &vis[0], &size, L, nb, dist)

    return ids_arr[:size].copy(), dists_arr[:size].copy(), trace_arr[:nt].copy(), expansions, fallbacks


def detour_counts(const i32[::1] cands, const i32[:, ::1] lists, i32[::1] scratch):
    """For each candidate, how many earlier candidates list it as a neighbor.

    ``scratch`` is an all-zero int32 array indexed by id; it is left zeroed.
    """
    cdef Py_ssize_t n = cands.shape[0]
    cdef int R = lists.shape[1]
    cdef Py_ssize_t i, j, r
    cdef i32 w, p
    counts_arr = np.zeros(n, dtype=np.int32)
    cdef i32[::1] counts = counts_arr
    for i in range(n):
        scratch[cands[i]] = <i32>(i + 1)
    for j in range(n):
        for r in range(R):
            w = lists[cands[j], r]
            if w == 0:
                break
            p = scratch[w] - 1
            if p > j:
                counts[p] += 1
    for i in range(n):
        scratch[cands[i]] = 0
    return counts_arr


cdef inline double _predict(i32 h, const f64[::1] recent, const i32[::1] in_degree,
                            double alpha, double beta) noexcept nogil:
    return alpha * recent[h] + beta * log1p(<double>in_degree[h])


cdef i32 _clock_sweep(i32 M, i64* clock, u8[::1] ref, const i32[::1] rev_mapping,
                      const f64[::1] recent, const i32[::1] in_degree,
                      double alpha, double beta) noexcept nogil:
    cdef double fmin = INFINITY
    cdef double p
    cdef bint found = False
    cdef i32 s
    cdef i64 c = clock[0]
    for s in range(1, M + 1):
        if ref[s] == 0:
            p = _predict(rev_mapping[s], recent, in_degree, alpha, beta)
            if p < fmin:
                fmin = p
            found = True
    if not found:
        # every slot referenced: one full pass clears all bits, then retry
        for s in range(M):
            ref[c] = 0
            c = c % M + 1
        for s in range(1, M + 1):
            p = _predict(rev_mapping[s], recent, in_degree, alpha, beta)
            if p < fmin:
                fmin = p
    while True:
        if ref[c] == 0:
            if _predict(rev_mapping[c], recent, in_degree, alpha, beta) == fmin:
                clock[0] = c
                return <i32>c
        else:
            ref[c] = 0
        c = c % M + 1


def wavp_process(const i32[::1] trace, Py_ssize_t start, Py_ssize_t stop,
                 i32[::1] mapping, i32[::1] rev_mapping, u8[::1] ref,
                 f64[::1] recent, const i32[::1] in_degree,
                 i32[::1] free_stack, i64[::1] state,
                 double alpha, double beta, double theta,
                 i64 window_len, double decay,
                 i32[::1] log_h, i32[::1] log_d, f64[::1] counters):
    """Replay accesses through workload-aware placement.

    state = [clock, n_free, access_count]; counters accumulate
    [hot_hits, cold_computes, promotions, evictions, misses, sum_miss_predict].
    Returns the number of (h, d) promotions written to the log arrays.
    """
    cdef i32 M = rev_mapping.shape[0] - 1
    cdef Py_ssize_t t, k
    cdef Py_ssize_t n_recent = recent.shape[0]
    cdef i32 h, d, old
    cdef double p
    cdef i64 clock = state[0]
    cdef i64 n_free = state[1]
    cdef i64 count = state[2]
    cdef Py_ssize_t nlog = 0
    with nogil:
        for t in range(start, stop):
            h = trace[t]
            count += 1
            recent[h] += 1.0
            d = mapping[h]
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
                        d = free_stack[n_free]
                    else:
                        d = _clock_sweep(M, &clock, ref, rev_mapping, recent,
                                         in_degree, alpha, beta)
                        old = rev_mapping[d]
                        mapping[old] = 0
                        counters[3] += 1
                    mapping[h] = d
                    rev_mapping[d] = h
                    ref[d] = 1
                    counters[2] += 1
                    log_h[nlog] = h
                    log_d[nlog] = d
                    nlog += 1
            if window_len > 0 and count % window_len == 0:
                for k in range(n_recent):
                    recent[k] *= decay
    state[0] = clock
    state[1] = n_free
    state[2] = count
    return nlog


cdef inline bint _hless(double a1, double a2, i32 as_, i64 at,
                        double b1, double b2, i32 bs, i64 bt) noexcept nogil:
    if a1 != b1:
        return a1 < b1
    if a2 != b2:
        return a2 < b2
    if as_ != bs:
        return as_ < bs
    return at < bt


cdef void _hswap(f64[::1] k1, f64[::1] k2, i32[::1] hs, i64[::1] ht,
                 Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    cdef double x1 = k1[a]
    cdef double x2 = k2[a]
    cdef i32 xs = hs[a]
    cdef i64 xt = ht[a]
    k1[a] = k1[b]; k2[a] = k2[b]; hs[a] = hs[b]; ht[a] = ht[b]
    k1[b] = x1; k2[b] = x2; hs[b] = xs; ht[b] = xt


cdef void _sift_up(f64[::1] k1, f64[::1] k2, i32[::1] hs, i64[::1] ht,
                   Py_ssize_t i) noexcept nogil:
    cdef Py_ssize_t parent
    while i > 0:
        parent = (i - 1) >> 1
        if _hless(k1[i], k2[i], hs[i], ht[i], k1[parent], k2[parent], hs[parent], ht[parent]):
            _hswap(k1, k2, hs, ht, i, parent)
            i = parent
        else:
            break


cdef void _sift_down(f64[::1] k1, f64[::1] k2, i32[::1] hs, i64[::1] ht,
                     Py_ssize_t i, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t l, r, m
    while True:
        l = 2 * i + 1
        r = l + 1
        m = i
        if l < n and _hless(k1[l], k2[l], hs[l], ht[l], k1[m], k2[m], hs[m], ht[m]):
            m = l
        if r < n and _hless(k1[r], k2[r], hs[r], ht[r], k1[m], k2[m], hs[m], ht[m]):
            m = r
        if m == i:
            return
        _hswap(k1, k2, hs, ht, i, m)
        i = m


def baseline_process(int policy, const i32[::1] trace, Py_ssize_t start, Py_ssize_t stop,
                     i32[::1] mapping, i32[::1] rev_mapping, i32[::1] free_stack,
                     i64[::1] state, f64[::1] slot_val, i64[::1] slot_last,
                     i64[::1] slot_stamp, f64[::1] hk1, f64[::1] hk2,
                     i32[::1] hslot, i64[::1] hstamp, double lam,
                     i32[::1] log_h, i32[::1] log_d, f64[::1] counters):
    """Replay accesses through LRU (0), LFU (1) or LRFU (2) fetch-on-miss.

    state = [n_free, time, heap_size]; the heap holds lazily invalidated
    (k1, k2, slot, stamp) entries, valid iff stamp == slot_stamp[slot].
    """
    cdef i32 M = rev_mapping.shape[0] - 1
    cdef Py_ssize_t cap = hk1.shape[0]
    cdef Py_ssize_t t, i, n
    cdef i32 h, d, old, s
    cdef i64 n_free = state[0]
    cdef i64 now = state[1]
    cdef Py_ssize_t hsize = state[2]
    cdef double key1, key2
    cdef Py_ssize_t nlog = 0
    with nogil:
        for t in range(start, stop):
            h = trace[t]
            now += 1
            d = mapping[h]
            if d > 0:
                counters[0] += 1
            elif M == 0:
                counters[1] += 1
                continue
            else:
                if n_free > 0:
                    n_free -= 1
                    d = free_stack[n_free]
                else:
                    while True:
                        s = hslot[0]
                        if hstamp[0] == slot_stamp[s] and rev_mapping[s] > 0:
                            break
                        hsize -= 1
                        if hsize > 0:
                            _hswap(hk1, hk2, hslot, hstamp, 0, hsize)
                            _sift_down(hk1, hk2, hslot, hstamp, 0, hsize)
                    d = s
                    old = rev_mapping[d]
                    mapping[old] = 0
                    counters[3] += 1
                mapping[h] = d
                rev_mapping[d] = h
                slot_val[d] = 0.0
                slot_last[d] = now
                counters[2] += 1
                log_h[nlog] = h
                log_d[nlog] = d
                nlog += 1
            # refresh the slot's key for this access
            if policy == LRU:
                key1 = <double>now
                key2 = 0.0
            elif policy == LFU:
                slot_val[d] += 1.0
                key1 = slot_val[d]
                key2 = <double>now
            else:
                slot_val[d] = 1.0 + slot_val[d] * pow(2.0, -lam * <double>(now - slot_last[d]))
                key1 = log2(slot_val[d]) + lam * <double>now
                key2 = <double>now
            slot_last[d] = now
            slot_stamp[d] += 1
            if hsize == cap:
                # drop stale entries and re-heapify in place
                n = 0
                for i in range(hsize):
                    s = hslot[i]
                    if hstamp[i] == slot_stamp[s] and rev_mapping[s] > 0:
                        hk1[n] = hk1[i]; hk2[n] = hk2[i]; hslot[n] = s; hstamp[n] = hstamp[i]
                        n += 1
                hsize = n
                i = hsize // 2
                while i > 0:
                    i -= 1
                    _sift_down(hk1, hk2, hslot, hstamp, i, hsize)
            hk1[hsize] = key1
            hk2[hsize] = key2
            hslot[hsize] = d
            hstamp[hsize] = slot_stamp[d]
            hsize += 1
            _sift_up(hk1, hk2, hslot, hstamp, hsize - 1)
    state[0] = n_free
    state[1] = now
    state[2] = hsize
    return nlog


def row_dists(const f32[:, ::1] vectors, const i32[:, ::1] rows, const i64[::1] owners):
    """Squared distance from each owner to every id in its row; -inf for sentinels."""
    cdef Py_ssize_t n = rows.shape[0]
    cdef Py_ssize_t R = rows.shape[1]
    cdef Py_ssize_t dim = vectors.shape[1]
    cdef Py_ssize_t i, j
    cdef i32 w
    out_arr = np.empty((n, R), dtype=np.float64)
    cdef f64[:, ::1] out = out_arr
    with nogil:
        for i in range(n):
            for j in range(R):
                w = rows[i, j]
                if w == 0:
                    out[i, j] = -INFINITY
                else:
                    out[i, j] = _sqdist(&vectors[w, 0], &vectors[owners[i], 0], dim)
    return out_arr
