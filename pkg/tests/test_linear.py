"""OLS, BIC order selection, and the elastic-net solver."""

import math

import numpy as np
import pandas as pd
import pytest

from macrocast.errors import DataError, FitError
from macrocast.linear import (
    EnetConfig,
    ar_bic,
    ardi_bic,
    bic,
    enet_cd,
    enet_tune,
    kkt_residual,
    lambda_max,
    ols,
)


def _std0(M):
    return (M - M.mean(axis=0)) / M.std(axis=0)


# -------------------------------------------------------------------- OLS


def test_ols_exact_line():
    rng = np.random.default_rng(0)
    z = rng.normal(size=50)
    fit = ols(z[:, None], 2.0 * z)
    np.testing.assert_allclose(fit.beta, [0.0, 2.0], atol=1e-12)
    assert len(fit.beta) == 2


def test_ols_intercept_only():
    y = np.array([1.0, 2.0, 6.0])
    fit = ols(np.empty((3, 0)), y)
    np.testing.assert_allclose(fit.beta, [3.0])
    np.testing.assert_allclose(fit.predict(np.empty((2, 0))), [3.0, 3.0])


def test_ols_normal_equations():
    rng = np.random.default_rng(1)
    Z = rng.normal(size=(120, 7))
    y = rng.normal(size=120)
    fit = ols(Z, y)
    resid = y - fit.predict(Z)
    assert np.max(np.abs(Z.T @ resid)) < 1e-8
    assert abs(resid.sum()) < 1e-8


def test_ols_names_collinear_columns():
    rng = np.random.default_rng(2)
    df = pd.DataFrame(rng.normal(size=(40, 3)), columns=["a", "b", "c"])
    df["dup"] = df["a"] * 2.0 + df["b"]
    with pytest.raises(DataError, match="collinear"):
        ols(df, rng.normal(size=40))


def test_ols_rejects_wide_matrix():
    rng = np.random.default_rng(3)
    with pytest.raises(DataError, match="columns"):
        ols(rng.normal(size=(5, 9)), rng.normal(size=5))


def test_ols_zero_variance_named():
    rng = np.random.default_rng(4)
    df = pd.DataFrame({"live": rng.normal(size=30), "flat": np.ones(30)})
    with pytest.raises(DataError, match="flat"):
        ols(df, rng.normal(size=30))


def test_fit_json_round_trip():
    import json

    rng = np.random.default_rng(5)
    df = pd.DataFrame(rng.normal(size=(60, 2)), columns=["u", "v"])
    y = 1.5 + df["u"] * 3 - df["v"]
    fit = ols(df, y)
    out = json.loads(fit.to_json())
    assert set(out) == {"intercept", "u", "v"}
    assert out["u"] == pytest.approx(3.0, abs=1e-10)


# -------------------------------------------------------------------- BIC


def test_bic_formula():
    assert bic(10.0, 100, 3) == pytest.approx(100 * math.log(0.1) + 3 * math.log(100))
    assert bic(0.0, 50, 2) == -math.inf
    with pytest.raises(DataError):
        bic(1.0, 0, 1)


def _ar1(T, rho, seed, sigma=1.0):
    rng = np.random.default_rng(seed)
    y = np.zeros(T)
    for t in range(1, T):
        y[t] = rho * y[t - 1] + sigma * rng.normal()
    return pd.Series(y, index=pd.period_range("1980-01", periods=T, freq="M"), name="y")


def test_ar_bic_recovers_order_one():
    hits = 0
    for seed in range(100):
        _, p = ar_bic(_ar1(400, 0.9, seed), Pmax=6)
        hits += p == 1
    assert hits >= 90


def test_ar_bic_white_noise_picks_smallest():
    hits = 0
    for seed in range(60):
        fit, p = ar_bic(_ar1(300, 0.0, seed), Pmax=4)
        assert set(fit.diagnostics["bic"]) == {1, 2, 3, 4}
        hits += p == 1
    assert hits >= 40


def test_ar_bic_pmax_one():
    _, p = ar_bic(_ar1(80, 0.5, 0), Pmax=1)
    assert p == 1


def test_ar_bic_common_sample_scores():
    y = _ar1(150, 0.6, 7)
    fit, _ = ar_bic(y, Pmax=3)
    # recompute the p=2 candidate by hand on the Pmax-common sample
    from macrocast.features import build_lags

    target = y.shift(-1).dropna()
    lags = build_lags(y, 3)
    rows = lags.index.intersection(target.index)
    cand = ols(lags.loc[rows].iloc[:, :2], target.loc[rows])
    resid = target.loc[rows].to_numpy() - cand.predict(lags.loc[rows].iloc[:, :2])
    expect = bic(float(resid @ resid), len(rows), 3)
    assert fit.diagnostics["bic"][2] == pytest.approx(expect, rel=1e-12)


def test_ar_bic_explicit_target():
    y = _ar1(200, 0.5, 3)
    target = ((y.shift(-1) + y.shift(-2)) / 2).dropna()
    fit, p = ar_bic(y, Pmax=3, target=target)
    assert p in {1, 2, 3}
    assert len(fit.beta) == p + 1


def _factors(T, k, seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(T, k))
    idx = pd.period_range("1980-01", periods=T, freq="M")
    return pd.DataFrame(F, index=idx, columns=[f"F{j+1}" for j in range(k)])


def test_ardi_planted_factor():
    F = _factors(300, 8, 11)
    rng = np.random.default_rng(12)
    y = pd.Series(np.zeros(300), index=F.index, name="y")
    # next period's y is factor 1 plus tiny noise
    y.iloc[1:] = F["F1"].to_numpy()[:-1] + 1e-3 * rng.normal(size=299)
    fit, (p, pf, k) = ardi_bic(y, F, Pmax=2, Pfmax=2, Kmax=4)
    assert k >= 1
    rows = fit.diagnostics["chosen"]
    assert rows["k"] == k
    from macrocast.features import build_lags

    target = y.shift(-1).dropna()
    lags = build_lags(y, 2)
    flags = build_lags(F.iloc[:, :4], 2)
    common = lags.index.intersection(flags.index).intersection(target.index)
    cols = [f"F{j+1}_l{i}" for j in range(k) for i in range(pf)]
    design = pd.concat([lags.loc[common].iloc[:, :p], flags.loc[common, cols]], axis=1)
    resid = target.loc[common].to_numpy() - fit.predict(design)
    assert np.sqrt(np.mean(resid**2)) < 5e-3


def test_ardi_irrelevant_factors_stay_small():
    small = 0
    for seed in range(30):
        y = _ar1(250, 0.7, 100 + seed)
        F = _factors(250, 8, 200 + seed)
        ar_fit, _ = ar_bic(y, Pmax=3)
        fit, (p, pf, k) = ardi_bic(y, F, Pmax=3, Pfmax=2, Kmax=4)
        small += k == 1
        assert fit.diagnostics["bic"] >= min(ar_fit.diagnostics["bic"].values()) - 10.0
    assert small >= 20


def test_ardi_grid_of_one_is_ols():
    y = _ar1(120, 0.4, 5)
    F = _factors(120, 1, 6)
    fit, key = ardi_bic(y, F, Pmax=1, Pfmax=1, Kmax=1)
    assert key == (1, 1, 1)
    from macrocast.features import build_lags

    target = y.shift(-1).dropna()
    design = pd.concat([build_lags(y, 1), build_lags(F, 1)], axis=1)
    rows = design.index.intersection(target.index)
    direct = ols(design.loc[rows], target.loc[rows])
    np.testing.assert_allclose(fit.beta, direct.beta, atol=1e-12)


# ------------------------------------------------------------- lambda_max


def test_lambda_max_single_column():
    rng = np.random.default_rng(0)
    z = _std0(rng.normal(size=(40, 1)))
    y = 0.7 * z[:, 0]
    assert lambda_max(z, y, 1.0) == pytest.approx(0.7, abs=1e-12)
    assert lambda_max(z, y, 0.5) == pytest.approx(1.4, abs=1e-12)
    with pytest.raises(DataError):
        lambda_max(z, y, 0.0)


def test_lambda_max_kills_all_coefficients():
    rng = np.random.default_rng(1)
    Z = rng.normal(size=(80, 6))
    y = Z @ rng.normal(size=6) + rng.normal(size=80)
    lam = lambda_max(_std0(Z), y - y.mean(), 0.7)
    fit = enet_cd(Z, y, EnetConfig(alpha=0.7, lam=lam * 1.0001))
    np.testing.assert_array_equal(fit.beta[1:], 0.0)
    fit2 = enet_cd(Z, y, EnetConfig(alpha=0.7, lam=lam * 0.9))
    assert np.any(fit2.beta[1:] != 0.0)


# ---------------------------------------------------------------- enet_cd


def test_enet_lambda_zero_is_ols():
    rng = np.random.default_rng(2)
    Z = rng.normal(size=(100, 5))
    y = Z @ np.array([1.0, -2.0, 0.0, 0.5, 3.0]) + 0.1 * rng.normal(size=100)
    fit = enet_cd(Z, y, EnetConfig(alpha=0.5, lam=0.0))
    np.testing.assert_allclose(fit.beta, ols(Z, y).beta, atol=1e-8)


def test_enet_alpha_zero_matches_closed_form():
    rng = np.random.default_rng(3)
    Z = rng.normal(size=(90, 4))
    y = Z @ np.array([2.0, 0.0, -1.0, 0.3]) + rng.normal(size=90)
    lam = 0.37
    fit = enet_cd(Z, y, EnetConfig(alpha=0.0, lam=lam))
    Zs = _std0(Z)
    yc = y - y.mean()
    T = len(y)
    beta_std = np.linalg.solve(Zs.T @ Zs / T + lam * np.eye(4), Zs.T @ yc / T)
    np.testing.assert_allclose(fit.beta[1:], beta_std / Z.std(axis=0), atol=1e-8)
    expect_b0 = y.mean() - (beta_std / Z.std(axis=0)) @ Z.mean(axis=0)
    assert fit.beta[0] == pytest.approx(expect_b0, abs=1e-8)


def test_enet_kkt_on_random_draws():
    rng = np.random.default_rng(4)
    Z = rng.normal(size=(60, 3))
    Z[:, 2] = 0.8 * Z[:, 0] + 0.2 * rng.normal(size=60)
    y = Z @ np.array([1.0, 0.0, -0.5]) + rng.normal(size=60)
    Zs, yc = _std0(Z), y - y.mean()
    lam_ref = lambda_max(Zs, yc, 1.0)
    for _ in range(100):
        alpha = float(rng.uniform(0.05, 1.0))
        lam = float(lam_ref * 10 ** rng.uniform(-4, 0))
        fit = enet_cd(Z, y, EnetConfig(alpha=alpha, lam=lam))
        beta_std = fit.beta[1:] * Z.std(axis=0)
        assert kkt_residual(Zs, yc, beta_std, lam, alpha) < 1e-6
        assert fit.diagnostics["kkt"] < 1e-6


def test_enet_nonconvergence_reports_gap():
    rng = np.random.default_rng(5)
    base = rng.normal(size=(50, 1))
    Z = base + 1e-4 * rng.normal(size=(50, 8))
    y = rng.normal(size=50)
    with pytest.raises(FitError, match="KKT"):
        enet_cd(Z, y, EnetConfig(alpha=0.9, lam=1e-6, tol=1e-14, max_iter=2))


def test_enet_scaling_equivariance():
    rng = np.random.default_rng(6)
    Z = rng.normal(size=(70, 4))
    y = Z @ np.array([1.0, -1.0, 0.5, 0.0]) + rng.normal(size=70)
    cfg = EnetConfig(alpha=0.6, lam=0.05)
    fit = enet_cd(Z, y, cfg)
    Z2 = Z.copy()
    Z2[:, 1] *= 10.0
    fit2 = enet_cd(Z2, y, cfg)
    assert fit2.beta[2] == pytest.approx(fit.beta[2] / 10.0, rel=1e-9)
    np.testing.assert_allclose(fit2.predict(Z2), fit.predict(Z), atol=1e-9)


def test_enet_l1_path_monotone():
    rng = np.random.default_rng(7)
    Z = rng.normal(size=(100, 20))
    y = Z[:, 0] - 2 * Z[:, 1] + rng.normal(size=100)
    Zs, yc = _std0(Z), y - y.mean()
    top = lambda_max(Zs, yc, 1.0)
    lambdas = np.geomspace(top, top * 1e-4, 40)
    l1_prev = -1.0
    for lam in lambdas[::-1]:  # ascending lambda
        fit = enet_cd(Z, y, EnetConfig(alpha=1.0, lam=float(lam)))
        l1 = np.abs(fit.beta[1:] * Z.std(axis=0)).sum()
        if l1_prev >= 0:
            assert l1 <= l1_prev + 1e-10
        l1_prev = l1


def test_enet_composite_penalty_monotone():
    rng = np.random.default_rng(8)
    Z = rng.normal(size=(80, 10))
    y = Z @ rng.normal(size=10) + rng.normal(size=80)
    alpha = 0.35
    Zs, yc = _std0(Z), y - y.mean()
    top = lambda_max(Zs, yc, alpha)
    prev = math.inf
    for lam in np.geomspace(top * 1e-4, top, 25):
        fit = enet_cd(Z, y, EnetConfig(alpha=alpha, lam=float(lam)))
        b = fit.beta[1:] * Z.std(axis=0)
        pen = alpha * np.abs(b).sum() + (1 - alpha) / 2 * (b @ b)
        assert pen <= prev + 1e-10
        prev = pen


def test_enet_rejects_nonfinite():
    Z = np.array([[1.0, np.nan], [2.0, 3.0], [0.0, 1.0]])
    with pytest.raises(DataError, match="finite"):
        enet_cd(Z, np.ones(3), EnetConfig(alpha=0.5, lam=0.1))


def test_enet_config_validation():
    with pytest.raises(DataError):
        EnetConfig(alpha=1.2, lam=0.1)
    with pytest.raises(DataError):
        EnetConfig(alpha=0.5, lam=-1.0)


# --------------------------------------------------------------- enet_tune


def test_tune_deterministic():
    rng = np.random.default_rng(9)
    Z = rng.normal(size=(60, 8))
    y = Z[:, 0] + rng.normal(size=60)
    a = enet_tune(Z, y, alphas=np.array([0.3, 1.0]), n_lambda=15, seed=4)
    b = enet_tune(Z, y, alphas=np.array([0.3, 1.0]), n_lambda=15, seed=4)
    assert (a.alpha, a.lam) == (b.alpha, b.lam)


def test_tune_noise_target_shrinks_hard():
    alphas = np.round(np.arange(0.1, 1.01, 0.1), 2)
    n_lambda = 40
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(1000 + seed)
        Z = rng.normal(size=(120, 15))
        y = rng.normal(size=120)
        cfg = enet_tune(Z, y, alphas=alphas, n_lambda=n_lambda, seed=seed)
        Zs, yc = _std0(Z), y - y.mean()
        top = lambda_max(Zs, yc, max(cfg.alpha, 0.01))
        grid = np.geomspace(top, top * 1e-4, n_lambda)
        pos = int(np.argmin(np.abs(np.log(grid) - np.log(cfg.lam))))
        hits += pos < n_lambda // 10  # descending grid: small index = big lambda
    assert hits >= 80


def test_tune_recovers_sparse_support():
    alphas = np.round(np.arange(0.1, 1.01, 0.1), 2)
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(2000 + seed)
        Z = rng.normal(size=(300, 50))
        y = 3.0 * Z[:, 4] - 2.5 * Z[:, 17] + rng.normal(size=300)
        cfg = enet_tune(Z, y, alphas=alphas, n_lambda=40, seed=seed)
        fit = enet_cd(Z, y, EnetConfig(alpha=cfg.alpha, lam=cfg.lam))
        coefs = np.abs(fit.beta[1:] * Z.std(axis=0))
        top2 = set(np.argsort(coefs)[-2:])
        hits += top2 == {4, 17} and coefs[4] > 0 and coefs[17] > 0
    assert hits >= 80


def test_tune_validates_folds():
    rng = np.random.default_rng(10)
    with pytest.raises(DataError, match="folds"):
        enet_tune(rng.normal(size=(3, 2)), rng.normal(size=3), folds=5)
