"""Synthetic and file-backed vector corpora."""
import numpy as np

from ..vecio import read_vecs


def gaussian_mixture(n: int, dim: int, n_clusters: int = 64, latent: int = 16,
                     center_scale: float = 0.1, spread: float = 0.5, noise: float = 0.1,
                     seed: int = 0) -> np.ndarray:
    """Draw ``n`` points from a mixture of low-rank Gaussian blobs.

    Each component has a random center, a random ``latent``-dimensional
    basis, and isotropic noise on top. ``center_scale`` controls how much the
    components overlap; small values give a single connected manifold.
    """
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, center_scale, (n_clusters, dim))
    basis = rng.normal(0.0, 1.0 / np.sqrt(latent), (n_clusters, latent, dim))
    labels = rng.integers(0, n_clusters, n)
    out = np.empty((n, dim), dtype=np.float32)
    step = 8192
    for s in range(0, n, step):
        lab = labels[s:s + step]
        z = rng.normal(0.0, 1.0, (lab.size, latent))
        x = centers[lab] + spread * np.einsum("nl,nld->nd", z, basis[lab])
        x += rng.normal(0.0, noise, (lab.size, dim))
        out[s:s + step] = x
    return out


def load_dataset(path: str, count: int | None = None) -> np.ndarray:
    return read_vecs(path, count=count)


def with_sentinel(rows: np.ndarray) -> np.ndarray:
    """Prepend the unused row 0 so row i holds id i."""
    out = np.zeros((rows.shape[0] + 1, rows.shape[1]), dtype=np.float32)
    out[1:] = rows
    return out
