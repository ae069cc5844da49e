"""How deletions spread over neighbor lists: histogram of per-vertex deleted fractions."""
import numpy as np

BUCKETS = ("0-10%", "10-40%", "40%+")
MODES = ("uniform", "clustered")


def _victims(n: int, m: int, rng, mode: str, vectors, n_centers: int) -> np.ndarray:
    if mode == "uniform":
        return rng.choice(n, m, replace=False) + 1
    if vectors is None:
        raise ValueError("clustered mode needs the vectors")
    x = np.asarray(vectors[1: n + 1], dtype=np.float64)
    centers = x[rng.choice(n, min(n_centers, n), replace=False)]
    sq = np.einsum("ij,ij->i", x, x)
    near = np.full(n, np.inf)
    for c in centers:
        near = np.minimum(near, sq - 2 * x @ c + c @ c)
    # the m vertices closest to any center, ties to the lower id
    return np.lexsort((np.arange(n), near))[:m] + 1


def measure_deletion_spread(graph, deleted_fraction: float = 0.1, seed: int = 0,
                            mode: str = "uniform", vectors=None, n_centers: int = 16) -> dict:
    """Mark a random fraction of vertices deleted (on a copy) and bucket the
    remaining live vertices by the fraction of their neighbors that died.

    ``graph`` is a :class:`~tieredann.graph.VersionedGraph` or an (n+1, R)
    neighbor array with row 0 unused. ``mode="clustered"`` deletes the
    vertices nearest to a few random centers instead of a uniform sample.
    """
    if not 0.0 <= deleted_fraction <= 1.0:
        raise ValueError("deleted_fraction must be in [0, 1]")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    lists = graph.lists[: graph.n_ids + 1] if hasattr(graph, "lists") else np.asarray(graph)
    n = lists.shape[0] - 1
    rng = np.random.default_rng(seed)
    m = int(round(deleted_fraction * n))
    deleted = np.zeros(n + 1, dtype=bool)
    if m:
        deleted[_victims(n, m, rng, mode, vectors, n_centers)] = True
    rows = lists[1:]
    valid = rows > 0
    hit = deleted[rows] & valid
    degree = valid.sum(axis=1)
    frac = np.divide(hit.sum(axis=1), degree, out=np.zeros(n), where=degree > 0)
    live = ~deleted[1:]
    f = frac[live]
    counts = [int((f < 0.1).sum()), int(((f >= 0.1) & (f < 0.4)).sum()), int((f >= 0.4).sum())]
    return {"buckets": dict(zip(BUCKETS, counts)), "live": int(live.sum()),
            "deleted": int(m), "fraction": deleted_fraction, "mode": mode, "seed": seed,
            "max_fraction": float(f.max()) if f.size else 0.0}
