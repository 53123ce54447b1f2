"""Forest over ridge-penalized local linear models with time-varying output.

The model is y_t = X_t b_t + e_t with b_t = F(S_t), F a forest: each tree
routes date t through splits on the state variables S and reads a leaf-level
coefficient vector. Averaging leaf betas across trees gives a smooth
coefficient path; averaging X_t b_t gives the forecast, which (unlike leaf
means) can leave the training range of y.

Split protocol is shared verbatim with ``trees`` (see that module's
docstring): same stop checks against the weighted node size, same candidate
midpoints, same single rng draw per node, same tie guard (improvements must
exceed 1e-12 of the node's weighted SSE, so mathematically tied candidates
resolve to the earliest regardless of arithmetic), same traversal order.
With an intercept-only linear part, zero ridge penalty, zero kernel weight
and block size 1 the criterion collapses to the SSE criterion and the two
modules produce the same forests.

Leaf estimation weights, per candidate child: member dates carry their
bootstrap multiplicity; dates of the *parent node* at calendar distance 1
(resp. 2) from a member carry zeta (resp. zeta^2) times their multiplicity.
Whether such kernel smoothing should reach rows outside the node is
ambiguous in the source formulation; restricting borrowing to the node being
split is the reading implemented here, and it is what makes the restricted
mode collapse exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError, FitError
from ._rng import bootstrap_indices, derive_rng

__all__ = [
    "MrfConfig",
    "MrfTree",
    "MrfModel",
    "GtvpPath",
    "podium_weights",
    "ridge_wls",
    "mrf_split_search",
    "fit_mrf",
    "mrf_predict",
    "gtvp_extract",
    "mrf_variable_importance",
]


@dataclass(frozen=True)
class MrfConfig:
    """Settings for the varying-coefficient forest.

    ``linear_columns`` names the S columns forming the linear part (the
    intercept is implicit); None means intercept only.
    """

    linear_columns: tuple[str, ...] | None = None
    ridge_lambda: float = 0.1
    zeta: float = 0.5
    block_size: int = 12
    B: int = 500
    mtry_frac: float = 1.0 / 3.0
    min_leaf: int | None = None
    seed: int = 0
    bootstrap: bool = True

    def __post_init__(self):
        if not 0.0 <= self.zeta < 1.0:
            raise DataError(f"zeta must be in [0,1), got {self.zeta}")
        if self.ridge_lambda < 0:
            raise DataError(f"ridge_lambda must be >= 0, got {self.ridge_lambda}")
        if self.block_size < 1:
            raise DataError(f"block_size must be >= 1, got {self.block_size}")

    def resolved_min_leaf(self, k1: int) -> int:
        if self.min_leaf is None:
            return max(10, 2 * k1)
        if self.min_leaf < k1:
            raise DataError(
                f"min_leaf={self.min_leaf} cannot identify {k1} coefficients"
            )
        return self.min_leaf


@dataclass
class MrfTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    beta: np.ndarray  # (n_nodes, k1), meaningful on leaves
    count: np.ndarray  # weighted (multiplicity) node sizes


@dataclass
class MrfModel:
    trees: list[MrfTree]
    cfg: MrfConfig
    s_columns: list[str]
    x_columns: list[str]
    index: pd.Index
    time_pos: np.ndarray
    S: np.ndarray
    X: np.ndarray  # standardized linear part, no intercept column
    y_mean: float
    y_scale: float
    x_mean: np.ndarray
    x_scale: np.ndarray
    oob_indices: list[np.ndarray]
    mtry: int
    min_leaf: int
    ys: np.ndarray = field(default_factory=lambda: np.empty(0))


@dataclass
class GtvpPath:
    """Ensemble coefficient paths on the original data scale."""

    dates: pd.Index
    names: list[str]
    mean: pd.DataFrame
    lo68: pd.DataFrame
    hi68: pd.DataFrame
    lo90: pd.DataFrame
    hi90: pd.DataFrame
    persistence: pd.DataFrame | None = None
    long_run_mean: pd.Series | None = None
    long_run_defined: pd.Series | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        """Long format date x coefficient with band columns, plot-ready."""
        rows = []
        for name in self.names:
            block = pd.DataFrame(
                {
                    "date": self.dates.astype(str),
                    "coefficient": name,
                    "mean": self.mean[name].to_numpy(),
                    "lo68": self.lo68[name].to_numpy(),
                    "hi68": self.hi68[name].to_numpy(),
                    "lo90": self.lo90[name].to_numpy(),
                    "hi90": self.hi90[name].to_numpy(),
                }
            )
            rows.append(block)
        return pd.concat(rows, ignore_index=True)


def podium_weights(center: int, zeta: float, T: int) -> np.ndarray:
    """Kernel around one date: 1 at center, zeta at +-1, zeta^2 at +-2."""
    if not 0.0 <= zeta < 1.0:
        raise DataError(f"zeta must be in [0,1), got {zeta}")
    if not 0 <= center < T:
        raise DataError(f"center {center} outside [0, {T})")
    w = np.zeros(T)
    for d, val in ((0, 1.0), (1, zeta), (2, zeta * zeta)):
        lo, hi = center - d, center + d
        if lo >= 0:
            w[lo] = max(w[lo], val)
        if hi < T:
            w[hi] = max(w[hi], val)
    return w


def ridge_wls(X: np.ndarray, y: np.ndarray, w: np.ndarray, lam: float) -> np.ndarray:
    """Solve (X'WX + lam*D) b = X'Wy with D zero on the leading intercept."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if w.sum() <= 0:
        raise DataError("weights sum to zero")
    Xw = X * w[:, None]
    A = Xw.T @ X
    A[1:, 1:] += lam * np.eye(X.shape[1] - 1)
    b = Xw.T @ y
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"weighted system singular (lambda={lam:g})") from exc


def _podium_matrix(member: np.ndarray, col: np.ndarray, width: int, zeta: float) -> np.ndarray:
    """Kernel weights for candidate member masks, scattered on a calendar grid.

    member: (m, nt) bool in node-time order; col: calendar offset per node
    time. Returns (m, nt) weights 1 / zeta / zeta^2 / 0 by calendar distance.
    """
    m = member.shape[0]
    G = np.zeros((m, width), dtype=bool)
    G[:, col] = member
    d1 = G.copy()
    d1[:, 1:] |= G[:, :-1]
    d1[:, :-1] |= G[:, 1:]
    d2 = d1.copy()
    d2[:, 1:] |= d1[:, :-1]
    d2[:, :-1] |= d1[:, 1:]
    w = np.where(G, 1.0, np.where(d1, zeta, np.where(d2, zeta * zeta, 0.0)))
    return w[:, col]


def _children_objective(W, Xaug, ys, lam):
    """Batched ridge-WLS over candidate weight rows; returns (obj, beta)."""
    k1 = Xaug.shape[1]
    A = np.einsum("ct,ti,tj->cij", W, Xaug, Xaug, optimize=True)
    if lam > 0:
        A[:, np.arange(1, k1), np.arange(1, k1)] += lam
    b = np.einsum("ct,ti,t->ci", W, Xaug, ys, optimize=True)
    try:
        beta = np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise FitError(f"weighted system singular (lambda={lam:g})") from exc
    resid = ys[None, :] - beta @ Xaug.T
    obj = np.einsum("ct,ct->c", W, resid * resid, optimize=True)
    if lam > 0:
        obj = obj + lam * (beta[:, 1:] ** 2).sum(axis=1)
    return obj, beta


def _node_split(S, Xaug, ys, times, mult, tpos, feats, min_leaf, lam, zeta):
    """Best (feature, threshold, betas) over the node; None if no candidate."""
    nt = times.size
    col = tpos[times] - tpos[times].min()
    width = int(col.max()) + 1
    wtot = mult[times].sum()
    # tie guard relative to the node's weighted SSE, mirroring trees
    wn = mult[times].astype(float)
    yc = ys[times] - (wn @ ys[times]) / wn.sum()
    tol = 1e-12 * float(wn @ (yc * yc))
    best = (math.inf, -1, 0.0, None, None)
    for j in feats:
        v = S[times, j]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        wcum = np.cumsum(mult[times][order])
        i = np.arange(1, nt)
        ok = (vs[1:] > vs[:-1]) & (wcum[:-1] >= min_leaf) & (wtot - wcum[:-1] >= min_leaf)
        pos = i[ok]
        if pos.size == 0:
            continue
        thr = 0.5 * (vs[pos - 1] + vs[pos])
        # member masks back in node-time order
        rank = np.empty(nt, dtype=np.intp)
        rank[order] = np.arange(nt)
        left_member = rank[None, :] < pos[:, None]
        m_node = mult[times].astype(float)
        if zeta > 0.0:
            Wl = _podium_matrix(left_member, col, width, zeta) * m_node
            Wr = _podium_matrix(~left_member, col, width, zeta) * m_node
        else:
            Wl = left_member * m_node
            Wr = (~left_member) * m_node
        obj_l, beta_l = _children_objective(Wl, Xaug[times], ys[times], lam)
        obj_r, beta_r = _children_objective(Wr, Xaug[times], ys[times], lam)
        total = obj_l + obj_r
        i_best = int(np.argmax(total <= total.min() + tol))  # earliest within guard
        if total[i_best] < best[0] - tol:
            best = (
                float(total[i_best]),
                int(j),
                float(thr[i_best]),
                beta_l[i_best],
                beta_r[i_best],
            )
    return None if best[1] < 0 else best


def mrf_split_search(S, X_tilde, y, rows, cfg: MrfConfig, rng, mult=None):
    """One split decision, exposed for auditing the criterion.

    ``rows`` are time indices of the node; ``mult`` their multiplicities
    (default 1). Returns (j, c, objective, beta_left, beta_right) or None.
    Inputs are used as given: no standardization happens here.
    """
    S = np.asarray(S, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    X_tilde = np.asarray(X_tilde, dtype=float) if X_tilde is not None else np.empty((len(y), 0))
    Xaug = np.column_stack([np.ones(len(y)), X_tilde])
    rows = np.asarray(rows, dtype=np.intp)
    full_mult = np.zeros(len(y), dtype=np.intp)
    full_mult[rows] = 1 if mult is None else np.asarray(mult, dtype=np.intp)
    min_leaf = cfg.resolved_min_leaf(Xaug.shape[1])
    if full_mult[rows].sum() < 2 * min_leaf or np.ptp(y[rows]) == 0.0:
        return None
    p = S.shape[1]
    mtry = min(p, math.ceil(cfg.mtry_frac * p))
    if mtry < p:
        feats = np.sort(rng.choice(p, size=mtry, replace=False))
    else:
        feats = np.arange(p)
    res = _node_split(
        S, Xaug, y, rows, full_mult, np.arange(len(y)), feats, min_leaf,
        cfg.ridge_lambda, cfg.zeta,
    )
    if res is None:
        return None
    obj, j, c, bl, br = res
    return j, c, obj, bl, br


def _fit_one_tree(S, Xaug, ys, tpos, cfg, min_leaf, mtry, tree_index):
    T, p = S.shape
    rng = derive_rng(cfg.seed, tree_index)
    if cfg.bootstrap:
        idx = bootstrap_indices(rng, T, block_size=cfg.block_size)
    else:
        idx = np.arange(T)
    times, counts = np.unique(idx, return_counts=True)
    mult = np.zeros(T, dtype=np.intp)
    mult[times] = counts
    oob = np.setdiff1d(np.arange(T), times)

    feature, threshold, left, right, betas, wcount = [], [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        betas.append(np.zeros(Xaug.shape[1]))
        wcount.append(0)
        return len(feature) - 1

    root = new_node()
    betas[root] = ridge_wls(
        Xaug[times], ys[times], mult[times].astype(float), cfg.ridge_lambda
    )
    stack = [(root, times)]
    while stack:
        node, nts = stack.pop()
        wsize = int(mult[nts].sum())
        wcount[node] = wsize
        if wsize < 2 * min_leaf or np.ptp(ys[nts]) == 0.0:
            continue
        if mtry < p:
            feats = np.sort(rng.choice(p, size=mtry, replace=False))
        else:
            feats = np.arange(p)
        res = _node_split(S, Xaug, ys, nts, mult, tpos, feats, min_leaf, cfg.ridge_lambda, cfg.zeta)
        if res is None:
            continue
        _, j, thr, beta_l, beta_r = res
        feature[node], threshold[node] = j, thr
        mask = S[nts, j] <= thr
        lid, rid = new_node(), new_node()
        betas[lid], betas[rid] = beta_l, beta_r
        left[node], right[node] = lid, rid
        stack.append((rid, nts[~mask]))
        stack.append((lid, nts[mask]))

    return (
        MrfTree(
            feature=np.array(feature),
            threshold=np.array(threshold),
            left=np.array(left),
            right=np.array(right),
            beta=np.vstack(betas),
            count=np.array(wcount),
        ),
        oob,
    )


def fit_mrf(y: pd.Series, S: pd.DataFrame, cfg: MrfConfig, X_tilde: pd.DataFrame | None = None, threads: int = 1) -> MrfModel:
    """Fit the forest. y and the linear part are standardized internally;
    the state variables S are used raw (splits are scale-equivariant)."""
    if not isinstance(S, pd.DataFrame):
        S = pd.DataFrame(np.asarray(S, dtype=float))
        S.columns = [f"s{j}" for j in range(S.shape[1])]
    y = pd.Series(np.asarray(y, dtype=float).ravel(), index=S.index) if not isinstance(y, pd.Series) else y
    if not y.index.equals(S.index):
        raise DataError("y and S must share an index")
    if X_tilde is None:
        if cfg.linear_columns:
            missing = [c for c in cfg.linear_columns if c not in S.columns]
            if missing:
                raise DataError("linear part not in S: " + ", ".join(missing))
            X_tilde = S[list(cfg.linear_columns)]
        else:
            X_tilde = S.iloc[:, :0]
    if not X_tilde.index.equals(S.index):
        raise DataError("X_tilde and S must share an index")
    Sv = S.to_numpy(dtype=float)
    Xv = X_tilde.to_numpy(dtype=float)
    yv = y.to_numpy(dtype=float)
    if not (np.isfinite(Sv).all() and np.isfinite(Xv).all() and np.isfinite(yv).all()):
        raise DataError("non-finite values in MRF inputs")
    y_mean, y_scale = float(yv.mean()), float(yv.std())
    if y_scale == 0:
        raise DataError("target is constant")
    ys = (yv - y_mean) / y_scale
    if Xv.shape[1]:
        x_mean, x_scale = Xv.mean(axis=0), Xv.std(axis=0)
        if (x_scale == 0).any():
            dead = [X_tilde.columns[j] for j in np.flatnonzero(x_scale == 0)]
            raise DataError("zero-variance linear column(s): " + ", ".join(dead))
        Xs = (Xv - x_mean) / x_scale
    else:
        x_mean, x_scale = np.empty(0), np.empty(0)
        Xs = Xv
    Xaug = np.column_stack([np.ones(len(ys)), Xs])
    k1 = Xaug.shape[1]
    min_leaf = cfg.resolved_min_leaf(k1)
    T, p = Sv.shape
    if T < 2 * min_leaf:
        raise DataError(f"{T} rows < 2*min_leaf = {2 * min_leaf}")
    mtry = min(p, math.ceil(cfg.mtry_frac * p))
    if isinstance(S.index, pd.PeriodIndex):
        tpos = S.index.asi8.astype(np.intp)
    else:
        tpos = np.arange(T, dtype=np.intp)

    def one(i):
        return _fit_one_tree(Sv, Xaug, ys, tpos, cfg, min_leaf, mtry, i)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(cfg.B)))
    else:
        results = [one(i) for i in range(cfg.B)]
    return MrfModel(
        trees=[r[0] for r in results],
        cfg=cfg,
        s_columns=[str(c) for c in S.columns],
        x_columns=[str(c) for c in X_tilde.columns],
        index=S.index,
        time_pos=tpos,
        S=Sv,
        X=Xaug[:, 1:],
        y_mean=y_mean,
        y_scale=y_scale,
        x_mean=x_mean,
        x_scale=x_scale,
        oob_indices=[r[1] for r in results],
        mtry=mtry,
        min_leaf=min_leaf,
        ys=ys,
    )


def _route(tree: MrfTree, S: np.ndarray) -> np.ndarray:
    """Leaf node id per row."""
    out = np.zeros(S.shape[0], dtype=np.intp)
    stack = [(0, np.arange(S.shape[0]))]
    while stack:
        node, rows = stack.pop()
        if rows.size == 0:
            continue
        j = tree.feature[node]
        if j < 0:
            out[rows] = node
            continue
        mask = S[rows, j] <= tree.threshold[node]
        stack.append((tree.left[node], rows[mask]))
        stack.append((tree.right[node], rows[~mask]))
    return out


def _standardize_new(model: MrfModel, S_new, X_new):
    S_df = S_new if isinstance(S_new, pd.DataFrame) else None
    if S_df is not None:
        S_new = S_df[model.s_columns].to_numpy(dtype=float)
    S_new = np.atleast_2d(np.asarray(S_new, dtype=float))
    k = len(model.x_columns)
    if X_new is None and k:
        # linear part configured from S columns: rebuild it the same way
        if model.cfg.linear_columns and S_df is not None:
            X_new = S_df[list(model.cfg.linear_columns)]
        elif model.cfg.linear_columns:
            pos = [model.s_columns.index(c) for c in model.cfg.linear_columns]
            X_new = S_new[:, pos]
        else:
            raise DataError("model has a separate linear part; pass X_new")
    if X_new is None:
        X_new = np.empty((S_new.shape[0], 0))
    elif isinstance(X_new, pd.DataFrame):
        X_new = X_new[model.x_columns].to_numpy(dtype=float)
    X_new = np.atleast_2d(np.asarray(X_new, dtype=float))
    if X_new.shape[1] != k:
        raise DataError(f"linear part has {X_new.shape[1]} columns, expected {k}")
    if X_new.shape[1]:
        X_new = (X_new - model.x_mean) / model.x_scale
    return S_new, np.column_stack([np.ones(S_new.shape[0]), X_new])


def mrf_predict(model: MrfModel, S_new, X_new=None) -> np.ndarray:
    """Average over trees of X_t * beta_leaf(t). Linear leaves extrapolate:
    predictions are not confined to the training range of y."""
    S_new, Xaug = _standardize_new(model, S_new, X_new)
    acc = np.zeros(S_new.shape[0])
    for tree in model.trees:
        leaves = _route(tree, S_new)
        acc += np.einsum("ti,ti->t", Xaug, tree.beta[leaves])
    return model.y_mean + model.y_scale * acc / len(model.trees)


def _beta_original_scale(model: MrfModel, beta_std: np.ndarray) -> np.ndarray:
    """Map (..., k1) standardized-space betas to original data units."""
    out = np.empty_like(beta_std)
    if model.x_scale.size:
        out[..., 1:] = beta_std[..., 1:] * (model.y_scale / model.x_scale)
        out[..., 0] = model.y_mean + model.y_scale * (
            beta_std[..., 0] - beta_std[..., 1:] @ (model.x_mean / model.x_scale)
        )
    else:
        out[..., 0] = model.y_mean + model.y_scale * beta_std[..., 0]
    return out


def _beta_stack(model: MrfModel, S: np.ndarray) -> np.ndarray:
    """(B, T, k1) per-tree standardized leaf betas at each date."""
    out = np.empty((len(model.trees), S.shape[0], model.X.shape[1] + 1))
    for b, tree in enumerate(model.trees):
        out[b] = tree.beta[_route(tree, S)]
    return out


def gtvp_extract(model: MrfModel, S=None, X_tilde=None) -> GtvpPath:
    """Coefficient paths: ensemble mean plus 68% and 90% quantile bands,
    reported on the original data scale. The persistence path sums the y-lag
    coefficients; the long-run mean intercept/(1-persistence) is flagged
    undefined near a unit root (|1-persistence| < 0.05)."""
    if S is None:
        Sv, dates = model.S, model.index
    else:
        dates = S.index if isinstance(S, pd.DataFrame) else pd.RangeIndex(len(S))
        Sv = S[model.s_columns].to_numpy(dtype=float) if isinstance(S, pd.DataFrame) else np.asarray(S, dtype=float)
    stack = _beta_original_scale(model, _beta_stack(model, Sv))
    names = ["intercept"] + model.x_columns
    qs = np.percentile(stack, [16, 84, 5, 95], axis=0)

    def frame(M):
        return pd.DataFrame(M, index=dates, columns=names)

    path = GtvpPath(
        dates=dates,
        names=names,
        mean=frame(stack.mean(axis=0)),
        lo68=frame(qs[0]),
        hi68=frame(qs[1]),
        lo90=frame(qs[2]),
        hi90=frame(qs[3]),
    )
    ylags = [c for c in model.x_columns if c.startswith("y_l")]
    if ylags:
        cols = [names.index(c) for c in ylags]
        pers = stack[:, :, cols].sum(axis=2)
        pq = np.percentile(pers, [16, 84, 5, 95], axis=0)
        path.persistence = pd.DataFrame(
            {
                "mean": pers.mean(axis=0),
                "lo68": pq[0],
                "hi68": pq[1],
                "lo90": pq[2],
                "hi90": pq[3],
            },
            index=dates,
        )
        pers_mean = pers.mean(axis=0)
        defined = np.abs(1.0 - pers_mean) >= 0.05
        lrm = np.full(len(dates), np.nan)
        ic = stack.mean(axis=0)[:, 0]
        lrm[defined] = ic[defined] / (1.0 - pers_mean[defined])
        path.long_run_mean = pd.Series(lrm, index=dates)
        path.long_run_defined = pd.Series(defined, index=dates)
    return path


def _oob_rmse(model: MrfModel, Sv: np.ndarray, Xaug: np.ndarray, ys: np.ndarray) -> float:
    acc = np.zeros(len(ys))
    hits = np.zeros(len(ys))
    for tree, oob in zip(model.trees, model.oob_indices):
        if oob.size == 0:
            continue
        leaves = _route(tree, Sv[oob])
        acc[oob] += np.einsum("ti,ti->t", Xaug[oob], tree.beta[leaves])
        hits[oob] += 1
    ok = hits > 0
    pred = acc[ok] / hits[ok]
    return float(np.sqrt(np.mean((pred - ys[ok]) ** 2)))


def mrf_variable_importance(
    model: MrfModel,
    kind: str,
    holdout: tuple | None = None,
    n_perm: int = 20,
    seed: int = 0,
    perms: list[np.ndarray] | None = None,
) -> list[tuple[str, float]]:
    """Permutation importance of each state variable, ranked descending.

    OOB: % increase of out-of-bag RMSE. OOS: % increase of RMSE on a
    ``holdout=(S_new, X_new, y_new)`` window. BETA: % root-mean-square
    displacement of the ensemble-mean coefficient paths (standardized space,
    so coefficients contribute scale-free). ``perms`` overrides the random
    permutations (one array per repetition), e.g. to verify the identity
    permutation scores exactly zero.
    """
    if kind not in {"OOB", "OOS", "BETA"}:
        raise DataError(f"unknown importance kind: {kind}")
    p = len(model.s_columns)
    kind_id = {"OOB": 0, "OOS": 1, "BETA": 2}[kind]

    if kind == "OOS":
        if holdout is None:
            raise DataError("kind=OOS requires a holdout=(S, X, y) window")
        S_h, X_h, y_h = holdout
        y_h = np.asarray(y_h, dtype=float).ravel()
        S_base, Xaug_h = _standardize_new(model, S_h, X_h)

        def score(Sv):
            acc = np.zeros(len(y_h))
            for tree in model.trees:
                acc += np.einsum("ti,ti->t", Xaug_h, tree.beta[_route(tree, Sv)])
            pred = model.y_mean + model.y_scale * acc / len(model.trees)
            return float(np.sqrt(np.mean((pred - y_h) ** 2)))

        base = score(S_base)
    elif kind == "OOB":
        S_base = model.S
        Xaug = np.column_stack([np.ones(len(model.S)), model.X])

        def score(Sv):
            return _oob_rmse(model, Sv, Xaug, model.ys)

        base = score(S_base)
    else:
        S_base = model.S
        path0 = _beta_stack(model, S_base).mean(axis=0)
        base = float(np.sqrt(np.mean(path0**2)))

        def score(Sv):
            path = _beta_stack(model, Sv).mean(axis=0)
            return float(np.sqrt(np.mean((path - path0) ** 2)))

    gains = np.zeros(p)
    n_rep = len(perms) if perms is not None else n_perm
    for j in range(p):
        reps = np.empty(n_rep)
        for r in range(n_rep):
            if perms is not None:
                perm = np.asarray(perms[r], dtype=np.intp)
            else:
                perm = derive_rng(seed, kind_id, j, r).permutation(S_base.shape[0])
            Sp = S_base.copy()
            Sp[:, j] = S_base[perm, j]
            reps[r] = score(Sp)
        if kind == "BETA":
            gains[j] = 100.0 * reps.mean() / base
        else:
            gains[j] = 100.0 * (reps.mean() - base) / base
    return sorted(zip(model.s_columns, gains), key=lambda kv: -kv[1])
