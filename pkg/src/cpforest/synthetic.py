"""Synthetic data generator so the full harness can run without a real corpus."""

from __future__ import annotations

import numpy as np

from .data import Dataset, rng_from


def make_two_gaussians(
    n_benign: int,
    n_malicious: int,
    dim: int = 8,
    separation: float = 1.4,
    seed: int = 0,
) -> Dataset:
    """Two overlapping isotropic Gaussian classes.

    Class means sit `separation` apart along the all-ones direction, so the
    optimal accuracy is roughly Phi(separation / 2) regardless of `dim`
    (~76% at the default 1.4).
    """
    rng = rng_from(seed)
    offset = separation / (2.0 * np.sqrt(dim))
    Xb = rng.normal(loc=-offset, scale=1.0, size=(n_benign, dim))
    Xm = rng.normal(loc=+offset, scale=1.0, size=(n_malicious, dim))
    X = np.vstack([Xb, Xm])
    y = np.concatenate([np.zeros(n_benign, dtype=np.int64), np.ones(n_malicious, dtype=np.int64)])
    ids = tuple(f"syn-{i:06d}" for i in range(n_benign + n_malicious))
    names = tuple(f"x{j}" for j in range(dim))
    return Dataset(X, y, ids, names)
