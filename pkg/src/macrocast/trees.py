"""Regression trees, bagged forests, and gradient boosting on leaf means.

The split protocol here is load-bearing beyond this module: candidate
thresholds, stop conditions, tie-breaking, and the per-node rng draw order
are shared verbatim with the varying-coefficient forest, whose restricted
mode must reproduce these forests exactly. Change nothing here without
changing both.

Protocol, per node, in order:
  1. leaf if max_depth reached, fewer than 2*min_node rows, or y constant
     (no rng consumed for leaves);
  2. one rng draw (choice without replacement, sorted) iff mtry < n_features;
  3. candidates = midpoints between consecutive distinct sorted values,
     both children >= min_node; scan features ascending, thresholds
     ascending, keep the first candidate that improves the criterion by
     more than 1e-12 of the node SSE. The guard makes mathematically tied
     candidates (equal partitions of the y multiset, frequent under
     bootstrap duplication) resolve to the earliest one independently of
     summation order, so criteria computed by different arithmetic agree;
  4. recurse left then right (children pushed so left pops first).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from ._rng import bootstrap_indices, derive_rng
from ._util import kfold_split, split_positions

__all__ = [
    "RegressionTree",
    "ForestModel",
    "BoostModel",
    "fit_tree",
    "tree_predict",
    "fit_forest",
    "forest_predict",
    "oob_predict",
    "forest_importance",
    "fit_boost",
    "boost_predict",
    "boost_tune",
]


@dataclass
class RegressionTree:
    """Flat node arrays; ``feature[i] < 0`` marks node i as a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    gain: np.ndarray
    min_node: int
    mtry: int


@dataclass
class ForestModel:
    trees: list[RegressionTree]
    B: int
    seed: int
    oob_indices: list[np.ndarray]
    min_node: int
    mtry: int
    feature_names: list[str] | None = None


@dataclass
class BoostModel:
    trees: list[RegressionTree]
    eta: float
    n_steps: int
    max_depth: int
    init: float
    train_mse: np.ndarray = field(default_factory=lambda: np.empty(0))


def _node_sse(y: np.ndarray) -> float:
    return float(((y - y.mean()) ** 2).sum())


def _best_split(Z, y, rows, min_node, mtry, rng):
    """Best (feature, threshold, children SSE) under the shared protocol."""
    p = Z.shape[1]
    if mtry < p:
        feats = np.sort(rng.choice(p, size=mtry, replace=False))
    else:
        feats = np.arange(p)
    yn = y[rows]
    yn = yn - yn.mean()  # SSE is shift-invariant; keeps rounding << tol
    n = len(rows)
    tol = 1e-12 * float(yn @ yn)
    best = (math.inf, -1, 0.0)
    for j in feats:
        v = Z[rows, j]
        order = np.argsort(v, kind="stable")
        vs, ys = v[order], yn[order]
        pos, thr = split_positions(vs, min_node)
        if pos.size == 0:
            continue
        cs = np.cumsum(ys)
        cs2 = np.cumsum(ys * ys)
        sl, sl2 = cs[pos - 1], cs2[pos - 1]
        nl = pos.astype(float)
        nr = n - nl
        sse = (sl2 - sl * sl / nl) + ((cs2[-1] - sl2) - (cs[-1] - sl) ** 2 / nr)
        i = int(np.argmax(sse <= sse.min() + tol))  # earliest within guard
        if sse[i] < best[0] - tol:
            best = (float(sse[i]), int(j), float(thr[i]))
    return best


def fit_tree(Z, y, min_node: int = 1, mtry: int | None = None, rng=None, max_depth: int | None = None) -> RegressionTree:
    """Greedy SSE-minimizing tree; see module docstring for the protocol."""
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    T, p = Z.shape
    if T == 0:
        raise DataError("empty training data")
    if T != len(y):
        raise DataError(f"rows mismatch: Z has {T}, y has {len(y)}")
    if min_node < 1:
        raise DataError(f"min_node must be >= 1, got {min_node}")
    if T < 2 * min_node:
        raise DataError(f"{T} rows < 2*min_node = {2 * min_node}")
    mtry = p if mtry is None else min(mtry, p)

    feature, threshold, left, right = [], [], [], []
    value, count, gain = [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        count.append(0)
        gain.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(T), 0)]
    while stack:
        node, rows, depth = stack.pop()
        yn = y[rows]
        count[node] = len(rows)
        value[node] = float(yn.mean())
        if (
            (max_depth is not None and depth >= max_depth)
            or len(rows) < 2 * min_node
            or np.ptp(yn) == 0.0
        ):
            continue
        sse, j, thr = _best_split(Z, y, rows, min_node, mtry, rng)
        if j < 0:
            continue
        feature[node], threshold[node] = j, thr
        gain[node] = _node_sse(yn) - sse
        mask = Z[rows, j] <= thr
        lid, rid = new_node(), new_node()
        left[node], right[node] = lid, rid
        # push right first so the left child is processed next: pre-order
        stack.append((rid, rows[~mask], depth + 1))
        stack.append((lid, rows[mask], depth + 1))

    return RegressionTree(
        feature=np.array(feature),
        threshold=np.array(threshold),
        left=np.array(left),
        right=np.array(right),
        value=np.array(value),
        count=np.array(count),
        gain=np.array(gain),
        min_node=min_node,
        mtry=mtry,
    )


def tree_predict(tree: RegressionTree, Z) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    out = np.empty(Z.shape[0])
    stack = [(0, np.arange(Z.shape[0]))]
    while stack:
        node, rows = stack.pop()
        if rows.size == 0:
            continue
        j = tree.feature[node]
        if j < 0:
            out[rows] = tree.value[node]
            continue
        mask = Z[rows, j] <= tree.threshold[node]
        stack.append((tree.left[node], rows[mask]))
        stack.append((tree.right[node], rows[~mask]))
    return out


def fit_forest(
    Z,
    y,
    B: int = 500,
    min_node: int = 3,
    mtry: int | None = None,
    seed: int = 0,
    bootstrap: bool = True,
    threads: int = 1,
    feature_names: list[str] | None = None,
) -> ForestModel:
    """Bagged trees; tree i's rng stream depends only on (seed, i), so fits
    are identical no matter how fitting is scheduled."""
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    T, p = Z.shape
    mtry = math.ceil(p / 3) if mtry is None else mtry

    def one(i):
        rng = derive_rng(seed, i)
        if bootstrap:
            idx = bootstrap_indices(rng, T, block_size=1)
        else:
            idx = np.arange(T)
        tree = fit_tree(Z[idx], y[idx], min_node=min_node, mtry=mtry, rng=rng)
        oob = np.setdiff1d(np.arange(T), idx)
        return tree, oob

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(B)))
    else:
        results = [one(i) for i in range(B)]
    return ForestModel(
        trees=[r[0] for r in results],
        B=B,
        seed=seed,
        oob_indices=[r[1] for r in results],
        min_node=min_node,
        mtry=mtry,
        feature_names=feature_names,
    )


def forest_predict(model: ForestModel, Z) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    acc = np.zeros(Z.shape[0])
    for tree in model.trees:
        acc += tree_predict(tree, Z)
    return acc / len(model.trees)


def oob_predict(model: ForestModel, Z) -> np.ndarray:
    """Per-row average over trees that did not train on the row; NaN if none."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    acc = np.zeros(Z.shape[0])
    hits = np.zeros(Z.shape[0])
    for tree, oob in zip(model.trees, model.oob_indices):
        if oob.size == 0:
            continue
        acc[oob] += tree_predict(tree, Z[oob])
        hits[oob] += 1
    with np.errstate(invalid="ignore"):
        return np.where(hits > 0, acc / np.maximum(hits, 1), np.nan)


def forest_importance(
    model: ForestModel,
    Z,
    y,
    kind: str = "gain",
    n_perm: int = 20,
    seed: int = 0,
) -> np.ndarray:
    """Per-feature importance.

    ``gain``: mean total SSE reduction contributed by the feature's splits,
    averaged over trees. ``oob_perm``: percent increase of out-of-bag RMSE
    when the feature column is permuted, averaged over ``n_perm`` draws.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    p = Z.shape[1]
    if kind == "gain":
        out = np.zeros(p)
        for tree in model.trees:
            internal = tree.feature >= 0
            np.add.at(out, tree.feature[internal], tree.gain[internal])
        return out / len(model.trees)
    if kind != "oob_perm":
        raise DataError(f"unknown importance kind: {kind}")
    base = oob_predict(model, Z)
    ok = np.isfinite(base)
    rmse0 = float(np.sqrt(np.mean((base[ok] - y[ok]) ** 2)))
    out = np.zeros(p)
    for j in range(p):
        bumps = np.zeros(n_perm)
        for r in range(n_perm):
            rng = derive_rng(seed, j, r)
            Zp = Z.copy()
            Zp[:, j] = Z[rng.permutation(len(y)), j]
            pred = oob_predict(model, Zp)
            bumps[r] = np.sqrt(np.mean((pred[ok] - y[ok]) ** 2))
        out[j] = 100.0 * (bumps.mean() - rmse0) / rmse0
    return out


# ---------------------------------------------------------------- boosting


def fit_boost(
    Z,
    y,
    eta: float,
    n_steps: int,
    max_depth: int = 10,
    min_node: int = 1,
) -> BoostModel:
    """Gradient boosting under square loss: each step fits a depth-bounded
    tree to the residuals and adds it scaled by eta. Leaf means already solve
    the per-region line search, so the step scalar is 1."""
    if not 0.0 <= eta <= 1.0:
        raise DataError(f"eta must be in [0,1], got {eta}")
    if n_steps < 1:
        raise DataError(f"n_steps must be >= 1, got {n_steps}")
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    init = float(y.mean())
    resid = y - init
    trees = []
    mse = np.empty(n_steps)
    for step in range(n_steps):
        tree = fit_tree(Z, resid, min_node=min_node, mtry=None, rng=None, max_depth=max_depth)
        trees.append(tree)
        resid = resid - eta * tree_predict(tree, Z)
        mse[step] = float(np.mean(resid**2))
    return BoostModel(
        trees=trees,
        eta=eta,
        n_steps=n_steps,
        max_depth=max_depth,
        init=init,
        train_mse=mse,
    )


def boost_predict(model: BoostModel, Z, n_steps: int | None = None) -> np.ndarray:
    """Prediction after the first ``n_steps`` trees (all by default)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    k = model.n_steps if n_steps is None else min(n_steps, model.n_steps)
    acc = np.full(Z.shape[0], model.init)
    for tree in model.trees[:k]:
        acc += model.eta * tree_predict(tree, Z)
    return acc


def boost_tune(
    Z,
    y,
    etas=(0.01, 0.05, 0.1, 0.3),
    steps=(25, 50, 100, 200, 500),
    folds: int = 5,
    seed: int = 0,
    max_depth: int = 10,
    min_node: int = 1,
) -> tuple[float, int]:
    """(eta, n_steps) by K-fold MSE; one fit at max steps per (fold, eta)
    scores the whole step grid via staged predictions. Ties prefer fewer
    steps, then the smaller eta."""
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    T = len(y)
    if T < folds:
        raise DataError(f"{T} rows cannot form {folds} folds")
    steps = sorted(steps)
    fold_id = kfold_split(T, k=folds, seed=seed)
    cv = np.zeros((len(steps), len(etas)))
    for ei, eta in enumerate(etas):
        for f in range(folds):
            tr, va = fold_id != f, fold_id == f
            model = fit_boost(Z[tr], y[tr], eta, steps[-1], max_depth, min_node)
            pred = np.full(va.sum(), model.init)
            done = 0
            for si, s in enumerate(steps):
                for tree in model.trees[done:s]:
                    pred += eta * tree_predict(tree, Z[va])
                done = s
                cv[si, ei] += float(((pred - y[va]) ** 2).sum())
    cv /= T
    best = (math.inf, 0, 0)
    for si in range(len(steps)):
        for ei in range(len(etas)):
            if cv[si, ei] < best[0]:
                best = (cv[si, ei], si, ei)
    _, si, ei = best
    return float(etas[ei]), int(steps[si])
