"""Whole-stack gates: statistical recovery rates, exact identities, determinism.

Each test owns a wall-clock budget. The Monte Carlo thresholds are success
counts over fixed seed ranges, so a pass here is reproducible, not a coin
flip; probe rates were measured well inside the asserted bounds.
"""

import json
import math
import time

import numpy as np
import pandas as pd

from macrocast.cli import main as cli_main
from macrocast.evaluation import (
    ExperimentPlan,
    ForecastRecord,
    TargetSpec,
    dm_test,
    format_cell,
    records_frame,
    run_poos,
    write_records,
)
from macrocast.factors import extract_factors, marginal_r2, pc_p2
from macrocast.features import build_lags, marx, marx_invert
from macrocast.kernel import krr_fit, krr_predict, rbf_kernel
from macrocast.linear import EnetConfig, enet_cd, kkt_residual, lambda_max, ols
from macrocast.mrf import (
    MrfConfig,
    fit_mrf,
    gtvp_extract,
    mrf_predict,
    mrf_variable_importance,
)
from macrocast.neural import MlpConfig, finite_diff_gradcheck, mlp_train
from macrocast.panel import Panel, SeriesMeta, balance_panel_em, standardize, synth_dgp
from macrocast.registry import model_registry
from macrocast.trees import boost_predict, fit_boost, fit_forest, forest_predict

CATALOG = {m.name: m for m in model_registry()}


def pidx(T, start="2000-01"):
    return pd.period_range(start, periods=T, freq="M")


def std0(M):
    return (M - M.mean(axis=0)) / M.std(axis=0)


# ---------------------------------------------------------------- ensembles


def test_varying_coefficient_forest_restricts_to_plain_forest():
    """With an intercept-only linear part, no ridge, no kernel smoothing and
    single-period bootstrap blocks, the coefficient forest and the plain
    forest are the same estimator and must agree to 1e-10."""
    t0 = time.monotonic()
    for s in range(20):
        rng = np.random.default_rng(1000 + s)
        T = 45 + 3 * s
        p = 3 + s % 3
        Z = rng.normal(size=(T, p))
        y = np.sin(Z[:, 0]) + 0.5 * Z[:, 1] + 0.3 * rng.normal(size=T)
        grid = 2.0 * rng.normal(size=(30, p))
        rf = fit_forest(Z, y, B=8, min_node=3, seed=s)
        cfg = MrfConfig(
            linear_columns=None, ridge_lambda=0.0, zeta=0.0, block_size=1,
            B=8, min_leaf=3, seed=s,
        )
        S = pd.DataFrame(Z, columns=[f"s{j}" for j in range(p)])
        model = fit_mrf(pd.Series(y, index=S.index), S, cfg)
        for probe in (Z, grid):
            np.testing.assert_allclose(
                mrf_predict(model, probe), forest_predict(rf, probe), atol=1e-10
            )
    assert time.monotonic() - t0 < 120


def test_extrapolation_dichotomy_between_ensemble_families():
    t0 = time.monotonic()
    # averaging ensembles can never leave the hull of training targets; the
    # boosting bound needs its stage trees grown to interpolation depth (the
    # shipped configuration), since a multi-point leaf's residual mean can
    # slightly overshoot what remains of the gap
    for s in range(10):
        rng = np.random.default_rng(s)
        Z = rng.normal(size=(60, 4))
        y = Z @ rng.normal(size=4) + 0.5 * rng.normal(size=60)
        far = np.vstack([10.0 * Z + 5.0, -10.0 * Z - 5.0])
        rf = fit_forest(Z, y, B=30, min_node=3, seed=s)
        bst = fit_boost(Z, y, eta=0.1, n_steps=100)
        for pred in (forest_predict(rf, far), boost_predict(bst, far)):
            assert pred.min() >= y.min() and pred.max() <= y.max()

    # leaf-level linear parts extrapolate a linear law past the sample range
    escapes = 0
    for s in range(100):
        rng = np.random.default_rng(s)
        T = 70
        x = rng.normal(size=T)
        y = pd.Series(2.0 * x + 0.1 * rng.normal(size=T), index=pidx(T))
        S = pd.DataFrame(
            {"x": x, "n1": rng.normal(size=T), "n2": rng.normal(size=T)},
            index=y.index,
        )
        cfg = MrfConfig(linear_columns=("x",), B=20, min_leaf=15, block_size=1, seed=s)
        model = fit_mrf(y, S, cfg)
        far = pd.DataFrame({"x": [x.max() + 2.0], "n1": [0.0], "n2": [0.0]})
        escapes += mrf_predict(model, far)[0] > y.max()
    assert escapes >= 95, f"only {escapes}/100 runs extrapolated past max(y)"
    assert time.monotonic() - t0 < 120


# ------------------------------------------------------------- penalized fits


def test_elastic_net_stationarity_and_edge_cases():
    t0 = time.monotonic()
    rng = np.random.default_rng(4)
    Z = rng.normal(size=(60, 8))
    Z[:, 7] = 0.8 * Z[:, 0] + 0.2 * rng.normal(size=60)
    y = Z @ np.array([1.0, 0.0, -0.5, 0.0, 0.3, 0.0, 0.0, 0.8]) + rng.normal(size=60)
    Zs, yc = std0(Z), y - y.mean()

    lam_ref = lambda_max(Zs, yc, 1.0)
    for _ in range(100):
        alpha = float(rng.uniform(0.05, 1.0))
        lam = float(lam_ref * 10 ** rng.uniform(-4, 0))
        fit = enet_cd(Z, y, EnetConfig(alpha=alpha, lam=lam))
        beta_std = fit.beta[1:] * Z.std(axis=0)
        assert kkt_residual(Zs, yc, beta_std, lam, alpha) < 1e-6

    free = enet_cd(Z, y, EnetConfig(alpha=0.5, lam=0.0))
    np.testing.assert_allclose(free.beta, ols(Z, y).beta, atol=1e-8)

    for alpha in (1.0, 0.3):
        top = lambda_max(Zs, yc, alpha)
        dead = enet_cd(Z, y, EnetConfig(alpha=alpha, lam=1.000001 * top))
        assert (dead.beta[1:] == 0.0).all()
    assert time.monotonic() - t0 < 60


def test_kernel_ridge_solver_accuracy():
    t0 = time.monotonic()
    for s in range(3):
        rng = np.random.default_rng(s)
        Z = rng.normal(size=(60, 5))
        y = np.sin(Z[:, 0]) + 0.1 * rng.normal(size=60)
        fit = krr_fit(Z, y, sigma=1.5, lam=0.3)
        K = rbf_kernel(Z, Z, 1.5)
        resid = np.linalg.norm((K + 0.3 * np.eye(60)) @ fit.alpha_weights - y)
        assert resid < 1e-8

    rng = np.random.default_rng(3)
    Z = 3.0 * rng.normal(size=(40, 3))  # well-separated rows keep K invertible
    y = rng.normal(size=40)
    fit = krr_fit(Z, y, sigma=1.0, lam=1e-10)
    np.testing.assert_allclose(krr_predict(fit, Z), y, atol=1e-6)
    assert time.monotonic() - t0 < 30


# ------------------------------------------------------------ factor machinery


def test_factor_selection_imputation_and_variance_accounting():
    t0 = time.monotonic()
    hits = 0
    for s in range(100):
        panel, _, _ = synth_dgp(T=200, N=50, r=3, snr=10.0, seed=s)
        hits += pc_p2(panel.frame, kmax=10) == 3
    assert hits >= 95, f"rank selection found r=3 in only {hits}/100 panels"

    # per-factor shares must telescope to the full-regression fit
    panel, _, _ = synth_dgp(T=100, N=12, r=3, snr=8.0, seed=1)
    X, _, _ = standardize(panel.frame)
    fm = extract_factors(X, k=5)
    diag = marginal_r2(X, fm)
    F, arr = fm.factors.to_numpy(), X.to_numpy()
    for i in range(arr.shape[1]):
        coef, *_ = np.linalg.lstsq(F, arr[:, i], rcond=None)
        resid = arr[:, i] - F @ coef
        full_r2 = 1.0 - resid @ resid / (arr[:, i] @ arr[:, i])
        np.testing.assert_allclose(diag.mr2.iloc[i].sum(), full_r2, atol=1e-10)

    rng = np.random.default_rng(11)
    T, N = 60, 10
    truth = rng.standard_normal((T, 2)) @ rng.standard_normal((N, 2)).T
    mask = rng.random((T, N)) < 0.10
    mask[0, :] = False
    mask[:, 0] = False
    holed = truth.copy()
    holed[mask] = np.nan
    dates = pidx(T)
    meta = [SeriesMeta(id=f"S{j}", group=1, tcode=1, start_date=dates[0]) for j in range(N)]
    panel = Panel(frame=pd.DataFrame(holed, index=dates, columns=[m.id for m in meta]), meta=meta)
    balanced, report = balance_panel_em(panel, k=2, tol=1e-10, max_iter=2000)
    np.testing.assert_allclose(balanced.frame.to_numpy()[mask], truth[mask], atol=1e-6)
    assert report.converged
    trace = np.asarray(report.objective_trace)
    assert (np.diff(trace) <= 1e-12).all(), "imputation objective must not increase"
    assert time.monotonic() - t0 < 180


# ------------------------------------------------------------------ inference


def test_equal_accuracy_test_size_under_null():
    t0 = time.monotonic()
    rng = np.random.default_rng(2024)
    rejections = 0
    for _ in range(1000):
        d = rng.standard_normal(150)
        _, p = dm_test(d, h=1)
        rejections += p < 0.05
    assert 30 <= rejections <= 70, f"nominal 5% test rejected {rejections}/1000"
    assert time.monotonic() - t0 < 60


def test_network_gradients_match_finite_differences():
    t0 = time.monotonic()
    rng = np.random.default_rng(5)
    Z_probe = rng.normal(size=(12, 5))
    y_probe = rng.normal(size=12)
    for s in range(10):
        m = mlp_train(
            rng.normal(size=(40, 5)), rng.normal(size=40),
            MlpConfig(seed=s, epochs_max=1, batch=8),
        )
        assert finite_diff_gradcheck(m, Z_probe, y_probe) < 1e-4
    assert time.monotonic() - t0 < 60


def test_moving_average_rotation_round_trip():
    t0 = time.monotonic()
    for P in range(1, 13):
        rng = np.random.default_rng(P)
        x = pd.Series(rng.normal(size=40), index=pidx(40), name="x")
        M = marx(x, P)
        np.testing.assert_allclose(
            marx_invert(M.to_numpy()), build_lags(x, P).to_numpy(), atol=1e-12
        )
        if P == 1:
            np.testing.assert_array_equal(M.to_numpy().ravel(), x.to_numpy())
    assert time.monotonic() - t0 < 10


# ------------------------------------------------------------------- backtest


def _persistent_growth_world(seed):
    """Factor panel whose first series has AR(1) growth loading on factor 1.

    Growth persistence 0.5 puts the one-step no-change benchmark at a
    population MSE ratio of 4/3 against the correctly specified regression.
    """
    panel, F, _ = synth_dgp(T=200, N=30, r=2, snr=5.0, seed=seed)
    rng = np.random.default_rng(10_000 + seed)
    g = np.zeros(200)
    shock = 0.3 * F[:, 0] + 0.4 * rng.standard_normal(200)
    for t in range(1, 200):
        g[t] = 0.5 * g[t - 1] + shock[t]
    raw = panel.frame.copy()
    raw["S001"] = 100.0 * np.exp(np.cumsum(0.01 * g))
    return panel, raw


def test_backtest_ranks_autoregression_and_reproduces_bitwise(tmp_path):
    t0 = time.monotonic()
    wins = 0
    for s in range(100):
        panel, raw = _persistent_growth_world(s)
        plan = ExperimentPlan(
            targets=(TargetSpec("S001"),),
            horizons=(1,),
            models=[CATALOG["AR,BIC"], CATALOG["RW"]],
            poos_start="2008-01",
            seed=s,
        )
        df = records_frame(run_poos(plan, panel, raw=raw))
        mse = ((df.forecast - df.realized) ** 2).groupby(df.model).mean()
        wins += mse["RW"] / mse["AR,BIC"] > 1.0
    assert wins >= 90, f"regression beat no-change in only {wins}/100 worlds"

    # the same plan must replay to the bit, whatever the thread count, with
    # every estimator family in the race (shrunk so the gate stays fast)
    panel, raw = _persistent_growth_world(0)
    names = ["AR,BIC", "RW", "ARDI,BIC", "RIDGE", "KRR", "RF", "Boosting", "ARRF(2)", "NN-ARDI"]
    plan = ExperimentPlan(
        targets=(TargetSpec("S001"),),
        horizons=(1, 2),
        models=[CATALOG[n] for n in names],
        poos_start="2014-01",
        retune_every=12,
        seed=3,
        overrides={
            "RF": {"B": 20},
            "Boosting": {"etas": (0.1,), "steps": (10,), "max_depth": 3, "min_node": 10},
            "ARRF(2)": {"B": 5, "block_size": 1, "min_leaf": 45},
            "NN-ARDI": {"layers": (8,), "epochs_max": 5, "ensemble": 2, "patience": 2},
            "RIDGE": {"n_lambda": 20},
        },
    )
    runs = [
        run_poos(plan, panel, raw=raw, threads=1),
        run_poos(plan, panel, raw=raw, threads=1),
        run_poos(plan, panel, raw=raw, threads=4),
    ]
    assert runs[0] == runs[1] == runs[2]
    assert not any(r.error for r in runs[0])
    paths = [tmp_path / f"r{i}.csv" for i in range(3)]
    for recs, path in zip(runs, paths):
        write_records(recs, path)
    assert paths[0].read_bytes() == paths[1].read_bytes() == paths[2].read_bytes()
    assert time.monotonic() - t0 < 600


def test_planted_regime_shift_recovery_and_importance():
    """A slope that jumps from -1 to +2 when one state variable crosses its
    threshold should show up in the extracted coefficient path, and that
    state variable should out-rank the decoys under every importance score."""
    t0 = time.monotonic()
    sign_hits = vi_hits = 0
    for s in range(100):
        rng = np.random.default_rng(s)
        T = 120
        x = rng.normal(size=T)
        S = pd.DataFrame(
            {"gen": rng.uniform(0, 1, T), "n1": rng.normal(size=T), "n2": rng.normal(size=T)},
            index=pidx(T),
        )
        slope = np.where(S["gen"] <= 0.5, -1.0, 2.0)
        y = pd.Series(slope * x + 0.2 * rng.normal(size=T), index=S.index)
        X = pd.DataFrame({"x": x}, index=S.index)
        cfg = MrfConfig(
            ridge_lambda=0.05, B=30, min_leaf=12, seed=s, block_size=1, mtry_frac=1.0
        )
        model = fit_mrf(y, S, cfg, X_tilde=X)

        path = gtvp_extract(model).mean["x"].to_numpy()
        upper = S["gen"].to_numpy() > 0.5
        sign_hits += path[upper].mean() > path[~upper].mean()

        hold = (S.iloc[90:], X.iloc[90:], y.iloc[90:])
        first = []
        for kind in ("OOB", "BETA", "OOS"):
            kw = {"holdout": hold} if kind == "OOS" else {}
            ranked = mrf_variable_importance(model, kind, n_perm=5, seed=1, **kw)
            first.append(ranked[0][0])
        vi_hits += all(name == "gen" for name in first)
    assert sign_hits >= 90, f"coefficient path shifted the right way in {sign_hits}/100"
    assert vi_hits >= 90, f"generator ranked first everywhere in {vi_hits}/100"
    assert time.monotonic() - t0 < 300


# ------------------------------------------------------------- output layout


def test_output_layout_fixtures(tmp_path, capsys):
    """Layout contracts only: column sets and the cell grammar are pinned
    here, not any particular numeric values."""
    t0 = time.monotonic()
    assert format_cell(1.296, 0.004) == "1.30***"

    root = tmp_path / "world"
    assert cli_main(["synth", "--T", "120", "--N", "20", "--r", "2", "--seed", "9", "--out", str(root)]) == 0
    assert cli_main(["ingest", "--manifest", str(root / "manifest.csv"), "--data", str(root / "data.csv"), "--out", str(root)]) == 0
    fx = root / "fx"
    assert cli_main(["factors", "--panel", str(root / "panel.csv"), "--manifest", str(root / "manifest.csv"), "--out", str(fx), "--k", "2"]) == 0
    assert list(pd.read_csv(fx / "factor_summary.csv").columns) == ["factor", "avg_mr2", "cum_total_r2"]
    assert list(pd.read_csv(fx / "factor_top_series.csv").columns) == ["factor", "rank", "series", "group", "mr2"]
    assert list(pd.read_csv(fx / "marginal_r2.csv").columns) == ["series", "factor", "mr2"]
    assert list(pd.read_csv(fx / "factor_counts.csv").columns) == ["date", "k", "total_r2"]

    # one benchmark row of exact 1.00s, starred ratio cells elsewhere
    origins = pd.period_range("2012-01", periods=40, freq="M")
    recs = []
    for i, o in enumerate(origins):
        e2 = 1.296 + (0.65 if i % 2 == 0 else -0.65)
        recs.append(ForecastRecord("A", "AR,BIC", 1, o, 1.0, 0.0))
        recs.append(ForecastRecord("A", "M", 1, o, math.sqrt(e2), 0.0))
    rec_path = tmp_path / "records.csv"
    write_records(recs, rec_path)
    rep = tmp_path / "rep"
    assert cli_main(["report", "--records", str(rec_path), "--out", str(rep)]) == 0
    assert "relative MSE vs AR,BIC" in capsys.readouterr().out
    cells = pd.read_csv(rep / "table_full_h1.csv", index_col=0)
    assert list(cells.index) == ["AR,BIC", "M"]
    assert cells.loc["AR,BIC", "A"] == "1.00"
    assert cells.loc["M", "A"] == "1.30***"
    blob = json.loads((rep / "table_full_h1.json").read_text())
    assert set(blob) >= {"window", "h", "benchmark", "ratios", "pvalues", "cells", "counts"}
    assert time.monotonic() - t0 < 60
