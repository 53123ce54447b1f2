"""Deterministic rng derivation and resampling helpers.

Every stochastic component draws from a generator derived from a master seed
plus a stable integer path (tree index, fold index, origin index, ...), so
results never depend on execution order or thread count.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

__all__ = ["derive_rng", "derive_seed", "child_seed", "bootstrap_indices"]


def derive_seed(seed: int, *path: int) -> np.random.SeedSequence:
    """Seed sequence for the component identified by ``(seed, *path)``."""
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))


def child_seed(seed: int, *path: int) -> int:
    """Derived integer seed, for nesting components that take a master seed."""
    return int(derive_seed(seed, *path).generate_state(1, np.uint64)[0])


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Generator for the component identified by ``(seed, *path)``."""
    return np.random.default_rng(derive_seed(seed, *path))


def bootstrap_indices(rng: np.random.Generator, n: int, block_size: int = 1) -> np.ndarray:
    """Draw a bootstrap sample of ``n`` row indices, sorted ascending.

    ``block_size=1`` is the iid bootstrap: exactly one call
    ``rng.integers(0, n, size=n)``. Larger blocks resample contiguous runs
    (moving-block bootstrap): ceil(n/block) block starts are drawn uniformly
    and the concatenated runs are truncated to length ``n``. With block 1 the
    two branches issue the identical rng call, so restricted configurations
    consume the same stream as the iid sampler.
    """
    if n < 1:
        raise ValueError("need at least one row to resample")
    block = int(block_size)
    if block < 1:
        raise ValueError("block_size must be >= 1")
    block = min(block, n)
    n_blocks = math.ceil(n / block)
    starts = rng.integers(0, n - block + 1, size=n_blocks)
    if block == 1:
        idx = starts
    else:
        idx = (starts[:, None] + np.arange(block)[None, :]).ravel()[:n]
    return np.sort(idx)
