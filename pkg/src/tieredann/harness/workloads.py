"""Streaming workload generators and the line-oriented trace format.

Trace lines::

    B <n>            build from the first n dataset vectors
    I <vec_index>    insert dataset row vec_index (0-based)
    D <h_id>         delete a previously inserted id
    S <qidx> <k>     search query row qidx for k neighbors
    C                checkpoint (evaluate recall)
    # ...            comment; "# step <t>" marks a step boundary

Ids are allocated 1, 2, 3, ... in insertion order (a build of n vectors takes
ids 1..n), so generators know the id each insert will receive.
"""
from dataclasses import dataclass, field

import numpy as np

WORKLOADS = ("sliding", "expiration", "clustered", "growth")


@dataclass
class Trace:
    steps: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    # builder helpers keep the id counter in sync with inserts
    _next_id: int = 1

    def build(self, n: int):
        self.steps.append(("B", int(n)))
        self._next_id = int(n) + 1

    def insert(self, vec_index: int) -> int:
        self.steps.append(("I", int(vec_index)))
        h = self._next_id
        self._next_id += 1
        return h

    def delete(self, h: int):
        self.steps.append(("D", int(h)))

    def search(self, qidx: int, k: int):
        self.steps.append(("S", int(qidx), int(k)))

    def checkpoint(self):
        self.steps.append(("C",))

    def step(self, t: int):
        self.steps.append(("#", int(t)))

    def counts(self) -> dict:
        out = {}
        for s in self.steps:
            out[s[0]] = out.get(s[0], 0) + 1
        return out

    def to_text(self) -> str:
        lines = []
        for key in sorted(self.meta):
            lines.append(f"# {key}={self.meta[key]}")
        for s in self.steps:
            if s[0] == "#":
                lines.append(f"# step {s[1]}")
            else:
                lines.append(" ".join(str(x) for x in s))
        return "\n".join(lines) + "\n"

    def write(self, path: str):
        with open(path, "w") as f:
            f.write(self.to_text())


class TraceError(ValueError):
    pass


def parse_trace(text: str) -> Trace:
    tr = Trace()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("step "):
                tr.steps.append(("#", int(body.split()[1])))
            elif "=" in body:
                k, v = body.split("=", 1)
                tr.meta[k.strip()] = v.strip()
            continue
        parts = line.split()
        op, args = parts[0], parts[1:]
        want = {"B": 1, "I": 1, "D": 1, "S": 2, "C": 0}.get(op)
        if want is None or len(args) != want:
            raise TraceError(f"line {lineno}: malformed {line!r}")
        tr.steps.append((op, *(int(a) for a in args)))
    return tr


def read_trace(path: str) -> Trace:
    with open(path) as f:
        return parse_trace(f.read())


def validate_trace(trace: Trace, n_vectors: int | None = None,
                   n_queries: int | None = None) -> None:
    """Replay against a reference state machine; raises TraceError on misuse."""
    live: set[int] = set()
    next_id = 1
    built = False
    for i, s in enumerate(trace.steps):
        op = s[0]
        if op == "B":
            if built or next_id != 1:
                raise TraceError(f"step {i}: build must come first")
            built = True
            live.update(range(1, s[1] + 1))
            next_id = s[1] + 1
        elif op == "I":
            if n_vectors is not None and not 0 <= s[1] < n_vectors:
                raise TraceError(f"step {i}: vector index {s[1]} out of range")
            live.add(next_id)
            next_id += 1
        elif op == "D":
            if s[1] not in live:
                raise TraceError(f"step {i}: delete of absent id {s[1]}")
            live.remove(s[1])
        elif op == "S":
            if n_queries is not None and not 0 <= s[1] < n_queries:
                raise TraceError(f"step {i}: query index {s[1]} out of range")
            if s[2] < 1:
                raise TraceError(f"step {i}: k must be positive")
        elif op == "C":
            if not live:
                raise TraceError(f"step {i}: checkpoint on an empty index")


# -- generators -------------------------------------------------------------

def gen_sliding_window(n_vectors: int, T_max: int = 200, bootstrap: str = "insert",
                       searches_per_step: int = 0, n_queries: int = 0, k: int = 10) -> Trace:
    """Insert segment t at step t; from step T/2 + 1 also delete segment t - T/2.

    ``bootstrap="build"`` replaces the first T/2 insert-only steps with one
    build of the same vectors.
    """
    if n_vectors < T_max:
        raise ValueError("dataset smaller than T_max")
    if bootstrap not in ("insert", "build"):
        raise ValueError("bootstrap must be 'insert' or 'build'")
    seg = n_vectors // T_max
    half = T_max // 2
    tr = Trace(meta={"workload": "sliding", "T_max": T_max, "segment": seg, "n": n_vectors,
                     "bootstrap": bootstrap})
    seg_ids: dict[int, list[int]] = {}
    first = 1
    if bootstrap == "build":
        tr.step(half)
        tr.build(seg * half)
        for t in range(1, half + 1):
            seg_ids[t] = list(range((t - 1) * seg + 1, t * seg + 1))
        first = half + 1
    q = 0
    for t in range(first, T_max + 1):
        tr.step(t)
        seg_ids[t] = [tr.insert(i) for i in range((t - 1) * seg, t * seg)]
        if t >= half + 1:
            for h in seg_ids.pop(t - half):
                tr.delete(h)
        for _ in range(searches_per_step if n_queries else 0):
            tr.search(q % n_queries, k)
            q += 1
        if t >= half + 1:
            tr.checkpoint()
    return tr


LIFETIMES = (10, 50, 100)
LIFETIME_WEIGHTS = (10 / 13, 2 / 13, 1 / 13)


def gen_expiration(n_vectors: int, T_max: int = 200, seed: int = 0,
                   checkpoint_every: int = 10) -> Trace:
    """Each vector gets a 10/50/100-step lifetime drawn 10:2:1 and is deleted
    when it expires (if that happens within the trace)."""
    if n_vectors < T_max:
        raise ValueError("dataset smaller than T_max")
    rng = np.random.default_rng(seed)
    per = n_vectors // T_max
    tr = Trace(meta={"workload": "expiration", "T_max": T_max, "n": n_vectors, "seed": seed})
    expiry: dict[int, list[int]] = {}
    lifetimes = rng.choice(LIFETIMES, size=per * T_max, p=LIFETIME_WEIGHTS)
    tr.meta["lifetime_counts"] = ",".join(str(int((lifetimes == x).sum())) for x in LIFETIMES)
    for t in range(1, T_max + 1):
        tr.step(t)
        for h in expiry.pop(t, []):
            tr.delete(h)
        for i in range((t - 1) * per, t * per):
            h = tr.insert(i)
            expiry.setdefault(t + int(lifetimes[i]), []).append(h)
        if checkpoint_every and t % checkpoint_every == 0:
            tr.checkpoint()
    return tr


def kmeans(x: np.ndarray, n_clusters: int, iters: int = 25, seed: int = 0):
    """Lloyd's algorithm with farthest-point initialization.

    Returns ``(labels, centers)``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < n_clusters:
        raise ValueError("fewer points than clusters")
    rng = np.random.default_rng(seed)
    sq = np.einsum("ij,ij->i", x, x)
    centers = np.empty((n_clusters, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    best = sq - 2 * x @ centers[0] + centers[0] @ centers[0]
    for c in range(1, n_clusters):
        centers[c] = x[int(np.argmax(best))]
        best = np.minimum(best, sq - 2 * x @ centers[c] + centers[c] @ centers[c])
    labels = np.zeros(n, dtype=np.int64)
    for it in range(iters):
        d = sq[:, None] - 2 * x @ centers.T + np.einsum("ij,ij->i", centers, centers)[None, :]
        new = np.argmin(d, axis=1)
        if it and np.array_equal(new, labels):
            break
        labels = new
        for c in range(n_clusters):
            members = labels == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
    return labels, centers


def gen_clustered(vectors: np.ndarray, n_clusters: int = 64, rounds: int = 5,
                  insert_frac: float = 0.5, delete_frac: float = 0.3, seed: int = 0) -> Trace:
    """Alternate insert and delete phases over k-means clusters.

    Every round inserts a random ``insert_frac`` of each cluster's
    not-yet-inserted vectors (the last round inserts the rest), then deletes
    a random ``delete_frac`` of the live members of that round's designated
    clusters (clusters ``c`` with ``c % rounds == round``).
    """
    n = vectors.shape[0]
    if n < n_clusters:
        raise ValueError("fewer vectors than clusters")
    labels, _ = kmeans(vectors, n_clusters, seed=seed)
    rng = np.random.default_rng(seed)
    tr = Trace(meta={"workload": "clustered", "n_clusters": n_clusters, "rounds": rounds,
                     "n": n, "seed": seed, "insert_frac": insert_frac,
                     "delete_frac": delete_frac})
    pending = {c: list(rng.permutation(np.flatnonzero(labels == c))) for c in range(n_clusters)}
    live_by_cluster: dict[int, list[int]] = {c: [] for c in range(n_clusters)}
    designated = {}
    for r in range(rounds):
        tr.step(2 * r + 1)
        for c in range(n_clusters):
            rest = pending[c]
            take = len(rest) if r == rounds - 1 else int(np.ceil(len(rest) * insert_frac))
            for i in rest[:take]:
                live_by_cluster[c].append(tr.insert(int(i)))
            pending[c] = rest[take:]
        tr.checkpoint()
        tr.step(2 * r + 2)
        chosen = [c for c in range(n_clusters) if c % rounds == r]
        designated[r] = chosen
        for c in chosen:
            members = live_by_cluster[c]
            m = int(len(members) * delete_frac)
            if m:
                pick = set(rng.choice(len(members), m, replace=False).tolist())
                for j in sorted(pick):
                    tr.delete(members[j])
                live_by_cluster[c] = [h for j, h in enumerate(members) if j not in pick]
        tr.checkpoint()
    tr.meta["labels_seed"] = seed
    tr.designated = designated  # type: ignore[attr-defined]
    tr.labels = labels  # type: ignore[attr-defined]
    return tr


def gen_growth(n_vectors: int, n_ops: int, insert_ratio: float = 0.9, seed: int = 0,
               n_queries: int = 100, k: int = 10, checkpoints: int = 10) -> Trace:
    """Seed-build 10% of the data, then a shuffled mix of inserts and searches."""
    seed_n = max(1, n_vectors // 10)
    n_ins = int(round(n_ops * insert_ratio))
    if seed_n + n_ins > n_vectors:
        raise ValueError("dataset too small for the insert budget")
    rng = np.random.default_rng(seed)
    ops = np.array([1] * n_ins + [0] * (n_ops - n_ins))
    rng.shuffle(ops)
    tr = Trace(meta={"workload": "growth", "n": n_vectors, "n_ops": n_ops,
                     "insert_ratio": insert_ratio, "seed": seed})
    tr.step(0)
    tr.build(seed_n)
    nxt = seed_n
    every = max(1, n_ops // checkpoints) if checkpoints else 0
    q = 0
    for i, op in enumerate(ops.tolist()):
        if op:
            tr.insert(nxt)
            nxt += 1
        else:
            tr.search(q % max(n_queries, 1), k)
            q += 1
        if every and (i + 1) % every == 0:
            tr.step(i + 1)
            tr.checkpoint()
    return tr
