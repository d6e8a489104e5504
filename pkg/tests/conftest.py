"""Shared helpers for building small clustered datasets."""
import numpy as np

from pgee.data import from_arrays, standardize


def make_dataset(n=10, T=4, p=5, seed=0, beta=None, noise=1.0,
                 standardized=False):
    """Random gaussian clustered dataset; optionally pooled-standardized."""
    rng = np.random.default_rng(seed)
    N = n * T
    X = rng.standard_normal((N, p))
    if beta is None:
        beta = rng.uniform(0.5, 1.5, p) * rng.choice([-1.0, 1.0], p)
    y = X @ np.asarray(beta, dtype=float) + noise * rng.standard_normal(N)
    d = from_arrays(np.repeat(np.arange(n), T), np.tile(np.arange(T), n), y, X)
    if standardized:
        d, _ = standardize(d)
    return d


def make_orthonormal_dataset(n=8, T=5, p=6, seed=0, beta=None, noise=0.5):
    """Pooled design with X'X = N*I exactly (soft-threshold oracle setting)."""
    rng = np.random.default_rng(seed)
    N = n * T
    raw = rng.standard_normal((N, p))
    raw -= raw.mean(axis=0)   # columns orthogonal to the constant vector
    Q, _ = np.linalg.qr(raw)
    X = Q * np.sqrt(N)        # X'X = N*I and exact zero means / unit variances
    if beta is None:
        beta = rng.uniform(0.5, 1.5, p) * rng.choice([-1.0, 1.0], p)
    y = X @ np.asarray(beta, dtype=float) + noise * rng.standard_normal(N)
    return from_arrays(np.repeat(np.arange(n), T), np.tile(np.arange(T), n),
                       y, X)
