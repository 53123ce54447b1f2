"""Small shared helpers: CV folds and split-candidate enumeration."""

from __future__ import annotations

import numpy as np

from ._rng import derive_rng

__all__ = ["kfold_split", "split_positions"]


def kfold_split(n_rows: int, k: int = 5, seed: int = 0) -> np.ndarray:
    """Assign ``n_rows`` rows to ``k`` folds by a seeded shuffle.

    Plain K-fold (not blocked): rows are permuted once and dealt into k
    near-equal contiguous chunks of the permutation. Returns an integer array
    of fold ids in row order. Deterministic given ``seed``.
    """
    if not 2 <= k <= n_rows:
        raise ValueError(f"need 2 <= k <= n_rows, got k={k}, n_rows={n_rows}")
    perm = derive_rng(seed, 0xF01D).permutation(n_rows)
    fold_id = np.empty(n_rows, dtype=np.intp)
    for f, chunk in enumerate(np.array_split(perm, k)):
        fold_id[chunk] = f
    return fold_id


def split_positions(v_sorted: np.ndarray, min_node: int) -> tuple[np.ndarray, np.ndarray]:
    """Candidate split points over one feature's sorted node values.

    A candidate sits between consecutive *distinct* values; its threshold is
    their midpoint and rows with value <= threshold go left. Positions i are
    left-child sizes; only positions leaving both children at least
    ``min_node`` rows survive. Returns (positions, thresholds), possibly empty.
    """
    n = v_sorted.shape[0]
    if n < 2 * min_node:
        return np.empty(0, dtype=np.intp), np.empty(0)
    i = np.arange(1, n)
    ok = (v_sorted[1:] > v_sorted[:-1]) & (i >= min_node) & (n - i >= min_node)
    pos = i[ok]
    thr = 0.5 * (v_sorted[pos - 1] + v_sorted[pos])
    return pos, thr
