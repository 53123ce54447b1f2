"""Model catalog and the glue that fits each entry at one forecast origin.

Each catalog row pins a learner, the feature blocks it sees, and its fixed
hyperparameters. The adapters translate the shared per-origin context (the
per-period growth series, the factor matrix, the transformed panel) into
every learner's native call, so the backtest runner can treat all models
uniformly: optionally ``tune_model`` on a schedule, then ``fit_predict``.

Data-driven hyperparameters (penalty paths, kernel widths, boosting depth)
are separated from fitting so the runner can reuse a tuning result across
several origins; learners that re-select structure on every fit (BIC lag
orders, the neural net's internal cross-validation) have no tuning step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd

from .errors import DataError
from .features import FeatureSet, build_lags
from .kernel import krr_fit, krr_predict, krr_tune
from .linear import ar_bic, ardi_bic, enet_cd, enet_tune
from .mrf import MrfConfig, fit_mrf, mrf_predict
from .neural import MlpConfig, nn_forecast
from .trees import boost_predict, boost_tune, fit_boost, fit_forest, forest_predict

__all__ = [
    "ModelSpec",
    "model_registry",
    "registry_names",
    "needs_design",
    "needs_tuning",
    "tune_model",
    "fit_predict",
    "forecast_direct",
]

KINDS = ("ar_bic", "rw", "ardi_bic", "enet", "krr", "rf", "boost", "mrf", "nn")


@dataclass(frozen=True)
class ModelSpec:
    """One catalog row: a learner plus its input recipe.

    ``uid`` is the row's position in the full catalog and stays stable when
    a run filters to a subset, so per-model derived seeds do not depend on
    which other models run alongside. ``features`` is None for models that
    build their own design (AR, ARDI) or need none (RW).
    """

    name: str
    kind: str
    uid: int
    features: FeatureSet | None = None
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DataError(f"unknown model kind {self.kind!r}")


def model_registry() -> tuple[ModelSpec, ...]:
    """The full model table, in its fixed reporting order.

    Feature recipes: the kernel model sees only [y-lags | factor-lags]
    (its implicit feature map replaces raw-regressor expansion), penalized
    and tree models see [y | F | X] with a +MARX twin, and every
    coefficient-path forest splits on the full [y | F | X | MARX] set while
    its linear part stays small (a handful of y lags, optionally the first
    factor lags).
    """
    yf = FeatureSet()
    yfx = FeatureSet(include_x=True)
    yfxm = FeatureSet(include_x=True, include_marx=True)
    rows: list[tuple[str, str, FeatureSet | None, dict[str, Any]]] = [
        ("AR,BIC", "ar_bic", None, {}),
        ("RW", "rw", None, {}),
        ("ARDI,BIC", "ardi_bic", None, {}),
        ("LASSO", "enet", yfx, {"alpha": 1.0}),
        ("LASSO+MARX", "enet", yfxm, {"alpha": 1.0}),
        ("RIDGE", "enet", yfx, {"alpha": 0.0}),
        ("RIDGE+MARX", "enet", yfxm, {"alpha": 0.0}),
        ("E-NET", "enet", yfx, {"alpha": None}),
        ("E-NET+MARX", "enet", yfxm, {"alpha": None}),
        ("KRR", "krr", yf, {}),
        ("RF", "rf", yfx, {}),
        ("RF+MARX", "rf", yfxm, {}),
        ("Boosting", "boost", yfx, {}),
        ("Boosting+MARX", "boost", yfxm, {}),
        ("ARRF(2)", "mrf", yfxm, {"linear": ("y_l0", "y_l1")}),
        ("ARRF(6)", "mrf", yfxm, {"linear": tuple(f"y_l{i}" for i in range(6))}),
        ("FA-ARRF(2,2)", "mrf", yfxm, {"linear": ("y_l0", "y_l1", "F1_l1", "F2_l1")}),
        (
            "FA-ARRF(2,4)",
            "mrf",
            yfxm,
            {"linear": ("y_l0", "y_l1", "F1_l1", "F2_l1", "F3_l1", "F4_l1")},
        ),
        ("NN-ARDI", "nn", yfx, {}),
        ("NN-ARDI+MARX", "nn", yfxm, {}),
    ]
    return tuple(
        ModelSpec(name, kind, uid, fs, dict(params))
        for uid, (name, kind, fs, params) in enumerate(rows)
    )


def registry_names() -> tuple[str, ...]:
    return tuple(m.name for m in model_registry())


def needs_design(spec: ModelSpec) -> bool:
    """Whether the runner must assemble a design matrix for this model."""
    return spec.kind not in ("rw", "ar_bic", "ardi_bic")


def needs_tuning(spec: ModelSpec) -> bool:
    """Whether the model has a separable hyperparameter search.

    BIC models re-select orders on every fit and the neural net
    cross-validates internally per fit, so only the penalized, kernel, and
    boosting entries participate in the runner's tuning schedule.
    """
    return spec.kind in ("enet", "krr", "boost")


def _np2d(Z) -> np.ndarray:
    if isinstance(Z, pd.DataFrame):
        return Z.to_numpy(dtype=float)
    return np.atleast_2d(np.asarray(Z, dtype=float))


def _center_scale(Z, y):
    """Train-sample standardization for learners whose solvers expect it."""
    M = _np2d(Z)
    mu = M.mean(axis=0)
    sd = M.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    yv = np.asarray(y, dtype=float).ravel()
    ybar = float(yv.mean())
    return (M - mu) / sd, mu, sd, yv - ybar, ybar


def tune_model(spec: ModelSpec, params: dict, Z, y, seed: int):
    """Run the model's hyperparameter search on (Z, y); None if it has none."""
    if spec.kind == "enet":
        alpha = params.get("alpha")
        if alpha is None:
            grid = params.get("alphas")
            alphas = None if grid is None else np.asarray(grid, dtype=float)
        else:
            alphas = np.array([float(alpha)])
        return enet_tune(
            Z,
            y,
            alphas=alphas,
            n_lambda=int(params.get("n_lambda", 100)),
            folds=int(params.get("folds", 5)),
            seed=seed,
            tol=float(params.get("tol", 1e-8)),
            max_iter=int(params.get("max_iter", 100_000)),
        )
    if spec.kind == "krr":
        Zs, _, _, yc, _ = _center_scale(Z, y)
        return krr_tune(
            Zs,
            yc,
            folds=int(params.get("folds", 5)),
            seed=seed,
            n_lambda=int(params.get("n_lambda", 30)),
        )
    if spec.kind == "boost":
        kw = {}
        if "etas" in params:
            kw["etas"] = tuple(params["etas"])
        if "steps" in params:
            kw["steps"] = tuple(params["steps"])
        return boost_tune(
            _np2d(Z),
            np.asarray(y, dtype=float).ravel(),
            folds=int(params.get("folds", 5)),
            seed=seed,
            max_depth=int(params.get("max_depth", 10)),
            min_node=int(params.get("min_node", 1)),
            **kw,
        )
    return None


def fit_predict(spec: ModelSpec, params: dict, tuned, Z, y, z_next, seed: int) -> float:
    """Fit the design-matrix model on (Z, y) and predict the single row z_next."""
    kind = spec.kind
    if kind == "enet":
        fit = enet_cd(Z, y, tuned)
        return float(fit.predict(z_next)[0])
    if kind == "krr":
        Zs, mu, sd, yc, ybar = _center_scale(Z, y)
        sigma, lam = tuned
        fit = krr_fit(Zs, yc, sigma, lam)
        zn = (_np2d(z_next) - mu) / sd
        return float(krr_predict(fit, zn)[0] + ybar)
    if kind == "rf":
        model = fit_forest(
            _np2d(Z),
            np.asarray(y, dtype=float).ravel(),
            B=int(params.get("B", 500)),
            min_node=int(params.get("min_node", 3)),
            seed=seed,
        )
        return float(forest_predict(model, _np2d(z_next))[0])
    if kind == "boost":
        eta, n_steps = tuned
        model = fit_boost(
            _np2d(Z),
            np.asarray(y, dtype=float).ravel(),
            eta=eta,
            n_steps=n_steps,
            max_depth=int(params.get("max_depth", 10)),
            min_node=int(params.get("min_node", 1)),
        )
        return float(boost_predict(model, _np2d(z_next))[0])
    if kind == "mrf":
        cfg = MrfConfig(
            linear_columns=tuple(params["linear"]),
            ridge_lambda=float(params.get("ridge_lambda", 0.1)),
            zeta=float(params.get("zeta", 0.5)),
            block_size=int(params.get("block_size", 12)),
            B=int(params.get("B", 500)),
            mtry_frac=float(params.get("mtry_frac", 1.0 / 3.0)),
            min_leaf=params.get("min_leaf"),
            seed=seed,
        )
        model = fit_mrf(y, Z, cfg)
        return float(mrf_predict(model, z_next)[0])
    if kind == "nn":
        cfg = MlpConfig(
            layers=tuple(params.get("layers", (32, 16))),
            epochs_max=int(params.get("epochs_max", 100)),
            batch=int(params.get("batch", 32)),
            patience=int(params.get("patience", 20)),
            ensemble=int(params.get("ensemble", 5)),
            seed=seed,
        )
        return float(nn_forecast(_np2d(Z), np.asarray(y, dtype=float).ravel(), _np2d(z_next), cfg)[0])
    raise DataError(f"model kind {kind!r} does not fit a design matrix")


def forecast_direct(
    spec: ModelSpec,
    params: dict,
    y_per: pd.Series,
    factors: pd.DataFrame | None,
    target: pd.Series,
    origin: pd.Period,
) -> float:
    """Forecast for models that build their own design (AR, ARDI) or none (RW)."""
    if spec.kind == "rw":
        # average growth already realized is the no-change forecast of growth:
        # in levels the series is treated as a random walk, so expected
        # h-ahead average growth is zero.
        return 0.0
    pmax = int(params.get("Pmax", 6))
    if spec.kind == "ar_bic":
        fit, p = ar_bic(y_per, Pmax=pmax, target=target)
        lags = build_lags(y_per.rename("y"), pmax)
        if origin not in lags.index:
            raise DataError(f"not enough history for {pmax} lags at {origin}")
        return float(fit.predict(lags.loc[[origin]].iloc[:, :p])[0])
    if spec.kind == "ardi_bic":
        if factors is None:
            raise DataError("factor block unavailable")
        pfmax = int(params.get("Pfmax", 6))
        kmax = int(params.get("Kmax", 8))
        fit, (p, pf, k) = ardi_bic(
            y_per, factors, Pmax=pmax, Pfmax=pfmax, Kmax=kmax, target=target
        )
        ylags = build_lags(y_per.rename("y"), pmax)
        flags = build_lags(factors.iloc[:, :kmax], pfmax)
        if origin not in ylags.index or origin not in flags.index:
            raise DataError(f"not enough history for the ARDI design at {origin}")
        fcols = [f"F{j + 1}_l{i}" for j in range(k) for i in range(pf)]
        row = pd.concat([ylags.loc[[origin]].iloc[:, :p], flags.loc[[origin], fcols]], axis=1)
        return float(fit.predict(row)[0])
    raise DataError(f"model kind {spec.kind!r} needs a design matrix")
