"""Linear estimators: OLS, BIC-selected AR/ARDI, elastic net by coordinate descent.

All fitting standardizes features internally; coefficients are reported on
the original scale (intercept first) so exported values are unit-meaningful.
The elastic-net objective is (1/2T)*SSR + lambda*(alpha*l1 + (1-alpha)/2*l2),
and lambda_max is defined consistently with that scaling.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.linalg

from .errors import DataError, FitError
from ._util import kfold_split

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - mirror always has numba
    _HAVE_NUMBA = False

__all__ = [
    "LinearFit",
    "EnetConfig",
    "ols",
    "bic",
    "ar_bic",
    "ardi_bic",
    "lambda_max",
    "enet_cd",
    "enet_tune",
    "kkt_residual",
]


@dataclass
class LinearFit:
    """Fitted linear model. ``beta[0]`` is the intercept, the rest align
    with ``column_names`` on the original (unstandardized) scale."""

    beta: np.ndarray
    column_names: list[str]
    means: np.ndarray
    stds: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def predict(self, Z) -> np.ndarray:
        M = _as_matrix(Z, self.column_names)
        return self.beta[0] + M @ self.beta[1:]

    def to_json(self) -> str:
        out = {"intercept": float(self.beta[0])}
        for name, b in zip(self.column_names, self.beta[1:]):
            out[name] = float(b)
        return json.dumps(out)


@dataclass(frozen=True)
class EnetConfig:
    alpha: float
    lam: float
    tol: float = 1e-10
    max_iter: int = 100_000

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError(f"alpha must be in [0,1], got {self.alpha}")
        if self.lam < 0:
            raise DataError(f"lambda must be >= 0, got {self.lam}")


def _as_matrix(Z, expected_names=None) -> np.ndarray:
    if isinstance(Z, pd.DataFrame):
        if expected_names is not None and list(Z.columns) != list(expected_names):
            raise DataError("feature columns do not match the fitted model")
        return Z.to_numpy(dtype=float)
    M = np.atleast_2d(np.asarray(Z, dtype=float))
    return M


def _names(Z, p) -> list[str]:
    if isinstance(Z, pd.DataFrame):
        return [str(c) for c in Z.columns]
    return [f"x{j}" for j in range(p)]


def _standardize(M: np.ndarray, names) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # population std: unit second moment makes the CD update denominator exact
    mu = M.mean(axis=0)
    sd = M.std(axis=0)
    dead = np.flatnonzero(sd == 0)
    if dead.size:
        raise DataError(
            "zero-variance feature(s): " + ", ".join(names[j] for j in dead)
        )
    return (M - mu) / sd, mu, sd


def _finish(beta_std, b0_std, mu, sd, ybar, names, diagnostics) -> LinearFit:
    coefs = beta_std / sd
    intercept = ybar + b0_std - float(coefs @ mu)
    return LinearFit(
        beta=np.concatenate([[intercept], coefs]),
        column_names=list(names),
        means=mu,
        stds=sd,
        diagnostics=diagnostics,
    )


# -------------------------------------------------------------------- OLS


def ols(Z, y) -> LinearFit:
    """Least squares with intercept; rank problems are reported, not patched."""
    y = np.asarray(y, dtype=float).ravel()
    M = _as_matrix(Z)
    names = _names(Z, M.shape[1])
    T, p = M.shape
    if T != len(y):
        raise DataError(f"rows mismatch: Z has {T}, y has {len(y)}")
    if p == 0:
        return LinearFit(
            beta=np.array([float(np.mean(y))]),
            column_names=[],
            means=np.empty(0),
            stds=np.empty(0),
        )
    if p > T:
        raise DataError(f"more columns ({p}) than rows ({T})")
    Ms, mu, sd = _standardize(M, names)
    R = scipy.linalg.qr(Ms, mode="r", pivoting=True)
    r_diag, piv = np.abs(np.diag(R[0])), R[1]
    keep = r_diag > r_diag[0] * max(T, p) * np.finfo(float).eps
    if not keep.all():
        bad = sorted(names[j] for j in piv[~keep])
        raise DataError("collinear feature(s): " + ", ".join(bad))
    ybar = float(np.mean(y))
    beta_std, *_ = np.linalg.lstsq(Ms, y - ybar, rcond=None)
    return _finish(beta_std, 0.0, mu, sd, ybar, names, {})


def bic(ssr: float, t_eff: int, q: int) -> float:
    """Gaussian concentrated-likelihood form; q counts the intercept."""
    if t_eff <= 0:
        raise DataError("empty estimation sample")
    if ssr <= 0:
        return -math.inf
    return t_eff * math.log(ssr / t_eff) + q * math.log(t_eff)


def _bic_of_fit(fit: LinearFit, Z, y) -> float:
    resid = np.asarray(y, dtype=float).ravel() - fit.predict(Z)
    return bic(float(resid @ resid), len(resid), len(fit.beta))


def ar_bic(y: pd.Series, Pmax: int = 6, target: pd.Series | None = None) -> tuple[LinearFit, int]:
    """Autoregression with lag order picked by BIC.

    ``target`` is the origin-indexed forecast object; when omitted the next
    value of ``y`` itself is used. All candidate orders are fit on the common
    sample (origins where Pmax lags exist) so scores are comparable.
    """
    from .features import build_lags

    if Pmax < 1:
        raise DataError(f"Pmax must be >= 1, got {Pmax}")
    if target is None:
        target = y.shift(-1).dropna()
    lags = build_lags(y.rename("y"), Pmax)
    rows = lags.index.intersection(target.index)
    if len(rows) <= Pmax + 1:
        raise DataError(f"only {len(rows)} usable rows for Pmax={Pmax}")
    lags = lags.loc[rows]
    yy = target.loc[rows]
    best, best_bic, scores = None, math.inf, {}
    for p in range(1, Pmax + 1):
        fit = ols(lags.iloc[:, :p], yy)
        score = _bic_of_fit(fit, lags.iloc[:, :p], yy)
        scores[p] = score
        if score < best_bic:
            best, best_bic = (fit, p), score
    fit, p = best
    fit.diagnostics["bic"] = scores
    fit.diagnostics["chosen"] = {"p": p}
    return fit, p


def ardi_bic(
    y: pd.Series,
    F: pd.DataFrame,
    Pmax: int = 6,
    Pfmax: int = 6,
    Kmax: int = 8,
    target: pd.Series | None = None,
) -> tuple[LinearFit, tuple[int, int, int]]:
    """Factor-augmented AR with (P_y, P_f, k) by exhaustive BIC on the common sample."""
    from .features import build_lags

    if min(Pmax, Pfmax, Kmax) < 1:
        raise DataError("grid bounds must all be >= 1")
    if F.shape[1] < Kmax:
        raise DataError(f"need {Kmax} factors, got {F.shape[1]}")
    if target is None:
        target = y.shift(-1).dropna()
    ylags = build_lags(y.rename("y"), Pmax)
    flags = build_lags(F.iloc[:, :Kmax], Pfmax)
    rows = ylags.index.intersection(flags.index).intersection(target.index)
    if len(rows) <= Pmax + Kmax * Pfmax + 1:
        raise DataError(f"only {len(rows)} usable rows for the ARDI grid")
    ylags, flags, yy = ylags.loc[rows], flags.loc[rows], target.loc[rows]
    best, best_bic, best_key = None, math.inf, None
    for p in range(1, Pmax + 1):
        for pf in range(1, Pfmax + 1):
            for k in range(1, Kmax + 1):
                fcols = [f"F{j + 1}_l{i}" for j in range(k) for i in range(pf)]
                design = pd.concat([ylags.iloc[:, :p], flags[fcols]], axis=1)
                fit = ols(design, yy)
                score = _bic_of_fit(fit, design, yy)
                if score < best_bic:
                    best, best_bic, best_key = fit, score, (p, pf, k)
    best.diagnostics["bic"] = best_bic
    best.diagnostics["chosen"] = {
        "p": best_key[0],
        "pf": best_key[1],
        "k": best_key[2],
    }
    return best, best_key


# ------------------------------------------------------------ elastic net


def lambda_max(Z_std: np.ndarray, y_centered: np.ndarray, alpha: float) -> float:
    """Smallest penalty that zeroes every coefficient (needs alpha > 0)."""
    if alpha <= 0:
        raise DataError("lambda_max is undefined at alpha = 0")
    Z = np.asarray(Z_std, dtype=float)
    y = np.asarray(y_centered, dtype=float).ravel()
    return float(np.max(np.abs(Z.T @ y)) / (len(y) * alpha))


def kkt_residual(Z_std, y_centered, beta_std, lam, alpha) -> float:
    """Max violation of the elastic-net stationarity conditions (standardized scale)."""
    Z = np.asarray(Z_std, dtype=float)
    y = np.asarray(y_centered, dtype=float).ravel()
    b = np.asarray(beta_std, dtype=float).ravel()
    g = Z.T @ (y - Z @ b) / len(y)
    active = b != 0
    res = np.zeros_like(b)
    res[active] = np.abs(
        -g[active] + lam * alpha * np.sign(b[active]) + lam * (1 - alpha) * b[active]
    )
    res[~active] = np.maximum(0.0, np.abs(g[~active]) - lam * alpha)
    return float(res.max(initial=0.0))


def _cd_path_python(Zs, yc, lambdas, alpha, tol, max_iter):
    T, p = Zs.shape
    betas = np.zeros((len(lambdas), p))
    n_iters = np.zeros(len(lambdas), dtype=np.int64)
    beta = np.zeros(p)
    r = yc.copy()
    for li, lam in enumerate(lambdas):
        thr = lam * alpha
        denom = 1.0 + lam * (1.0 - alpha)
        n_iters[li] = -1
        for it in range(max_iter):
            delta = 0.0
            for j in range(p):
                bj = beta[j]
                rho = Zs[:, j] @ r / T + bj
                if rho > thr:
                    bnew = (rho - thr) / denom
                elif rho < -thr:
                    bnew = (rho + thr) / denom
                else:
                    bnew = 0.0
                d = bj - bnew
                if d != 0.0:
                    r += Zs[:, j] * d
                    beta[j] = bnew
                    delta = max(delta, abs(d))
            if delta < tol:
                n_iters[li] = it + 1
                break
        betas[li] = beta
    return betas, n_iters


if _HAVE_NUMBA:

    @numba.njit(cache=True)
    def _cd_path_numba(Zs, yc, lambdas, alpha, tol, max_iter):  # pragma: no cover
        T, p = Zs.shape
        L = lambdas.shape[0]
        betas = np.zeros((L, p))
        n_iters = np.zeros(L, dtype=np.int64)
        beta = np.zeros(p)
        r = yc.copy()
        for li in range(L):
            lam = lambdas[li]
            thr = lam * alpha
            denom = 1.0 + lam * (1.0 - alpha)
            n_iters[li] = -1
            for it in range(max_iter):
                delta = 0.0
                for j in range(p):
                    bj = beta[j]
                    rho = 0.0
                    for t in range(T):
                        rho += Zs[t, j] * r[t]
                    rho = rho / T + bj
                    if rho > thr:
                        bnew = (rho - thr) / denom
                    elif rho < -thr:
                        bnew = (rho + thr) / denom
                    else:
                        bnew = 0.0
                    d = bj - bnew
                    if d != 0.0:
                        for t in range(T):
                            r[t] += Zs[t, j] * d
                        beta[j] = bnew
                        if abs(d) > delta:
                            delta = abs(d)
                if delta < tol:
                    n_iters[li] = it + 1
                    break
            for j in range(p):
                betas[li, j] = beta[j]
        return betas, n_iters

    _cd_path = _cd_path_numba
else:  # pragma: no cover
    _cd_path = _cd_path_python


def _ridge_path_std(Zs, yc, lambdas):
    """Closed-form ridge solutions on standardized data for a whole lambda grid."""
    T = Zs.shape[0]
    G = Zs.T @ Zs / T
    w, V = np.linalg.eigh(G)
    w = np.maximum(w, 0.0)
    c = V.T @ (Zs.T @ yc / T)
    return np.stack([V @ (c / (w + lam)) for lam in lambdas])


def enet_cd(Z, y, cfg: EnetConfig) -> LinearFit:
    """Elastic net at a fixed (alpha, lambda) by cyclic coordinate descent.

    lambda=0 falls back to least squares, alpha=0 to closed-form ridge; the
    fitted coefficients carry a KKT residual in ``diagnostics`` so callers
    can audit convergence instead of trusting it.
    """
    y = np.asarray(y, dtype=float).ravel()
    M = _as_matrix(Z)
    names = _names(Z, M.shape[1])
    if M.shape[0] != len(y):
        raise DataError(f"rows mismatch: Z has {M.shape[0]}, y has {len(y)}")
    if not (np.isfinite(M).all() and np.isfinite(y).all()):
        raise DataError("non-finite values in elastic-net inputs")
    Ms, mu, sd = _standardize(M, names)
    ybar = float(np.mean(y))
    yc = y - ybar
    if cfg.lam == 0.0:
        beta_std, *_ = np.linalg.lstsq(Ms, yc, rcond=None)
        n_iter = 0
    elif cfg.alpha == 0.0:
        beta_std = _ridge_path_std(Ms, yc, np.array([cfg.lam]))[0]
        n_iter = 0
    else:
        betas, n_iters = _cd_path(
            Ms, yc, np.array([cfg.lam]), cfg.alpha, cfg.tol, cfg.max_iter
        )
        if n_iters[0] < 0:
            gap = kkt_residual(Ms, yc, betas[0], cfg.lam, cfg.alpha)
            raise FitError(
                f"coordinate descent hit max_iter={cfg.max_iter} "
                f"(KKT residual {gap:.3e}, tol {cfg.tol:g})"
            )
        beta_std, n_iter = betas[0], int(n_iters[0])
    diagnostics = {
        "kkt": kkt_residual(Ms, yc, beta_std, cfg.lam, cfg.alpha),
        "n_iter": n_iter,
        "alpha": cfg.alpha,
        "lam": cfg.lam,
    }
    return _finish(beta_std, 0.0, mu, sd, ybar, names, diagnostics)


def _lambda_grid(lam_top: float, n_lambda: int) -> np.ndarray:
    # descending so the zero solution warm-starts the path
    return np.geomspace(lam_top, lam_top * 1e-4, n_lambda)


def enet_tune(
    Z,
    y,
    alphas: np.ndarray | None = None,
    n_lambda: int = 100,
    folds: int = 5,
    seed: int = 0,
    tol: float = 1e-8,
    max_iter: int = 100_000,
) -> EnetConfig:
    """Grid search (alpha x lambda) by K-fold MSE.

    The lambda grid is log-spaced on [lambda_max*1e-4, lambda_max] per alpha,
    fit as a warm-started descending path per fold. Exact CV ties go to the
    larger lambda, then the larger alpha: when the data cannot distinguish,
    shrink more.
    """
    y = np.asarray(y, dtype=float).ravel()
    M = _as_matrix(Z)
    names = _names(Z, M.shape[1])
    T = M.shape[0]
    if T != len(y):
        raise DataError(f"rows mismatch: Z has {T}, y has {len(y)}")
    if T < folds:
        raise DataError(f"{T} rows cannot form {folds} folds")
    if alphas is None:
        alphas = np.round(np.arange(0.01, 1.001, 0.01), 2)
    alphas = np.asarray(alphas, dtype=float)
    Ms_full, _, _ = _standardize(M, names)
    yc_full = y - y.mean()
    fold_id = kfold_split(T, k=folds, seed=seed)
    cv = np.zeros((len(alphas), n_lambda))
    grids = []
    for ai, alpha in enumerate(alphas):
        lam_top = lambda_max(Ms_full, yc_full, max(alpha, 0.01))
        lambdas = _lambda_grid(lam_top, n_lambda)
        grids.append(lambdas)
        sse = np.zeros(n_lambda)
        for f in range(folds):
            tr, va = fold_id != f, fold_id == f
            Ms, mu, sd = _standardize(M[tr], names)
            ybar = y[tr].mean()
            if alpha == 0.0:
                betas = _ridge_path_std(Ms, y[tr] - ybar, lambdas)
            else:
                betas, n_iters = _cd_path(Ms, y[tr] - ybar, lambdas, alpha, tol, max_iter)
                if (n_iters < 0).any():
                    bad = int(np.flatnonzero(n_iters < 0)[0])
                    raise FitError(
                        f"tuning path stalled at alpha={alpha}, "
                        f"lambda={lambdas[bad]:.3e} after {max_iter} sweeps"
                    )
            pred = ((M[va] - mu) / sd) @ betas.T + ybar
            sse += ((pred - y[va][:, None]) ** 2).sum(axis=0)
        cv[ai] = sse / T
    # grids are descending, so within an alpha the first of an exact-tie run
    # is the largest lambda; across alphas a tie moves to the larger alpha
    best = (math.inf, 0, 0)
    for ai in range(len(alphas)):
        for li in range(n_lambda):
            if cv[ai, li] < best[0] or (cv[ai, li] == best[0] and ai > best[1]):
                best = (cv[ai, li], ai, li)
    _, ai, li = best
    return EnetConfig(
        alpha=float(alphas[ai]), lam=float(grids[ai][li]), tol=tol, max_iter=max_iter
    )
