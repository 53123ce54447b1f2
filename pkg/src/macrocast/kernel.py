"""Radial-basis kernel ridge regression with cross-validated bandwidth and penalty.

krr_fit is deliberately plain: it solves (K + lambda*I) a = y and nothing
else. Centering y and standardizing features is the calling adapter's job,
which keeps the solver auditable against the linear-system contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from .errors import DataError, FitError
from ._util import kfold_split

__all__ = ["KrrFit", "rbf_kernel", "krr_fit", "krr_predict", "krr_tune"]


@dataclass
class KrrFit:
    alpha_weights: np.ndarray
    train_Z: np.ndarray
    sigma: float
    lam: float
    diagnostics: dict = field(default_factory=dict)


def rbf_kernel(A, B, sigma: float) -> np.ndarray:
    """K(x, x') = exp(-||x - x'||^2 / (2 sigma^2))."""
    if sigma <= 0:
        raise DataError(f"sigma must be > 0, got {sigma}")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise DataError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    D2 = cdist(A, B, metric="sqeuclidean")
    return np.exp(-D2 / (2.0 * sigma * sigma))


def krr_fit(Z, y, sigma: float, lam: float) -> KrrFit:
    """Solve (K + lambda*I) a = y by Cholesky; failure is reported, not patched."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if Z.shape[0] != len(y):
        raise DataError(f"rows mismatch: Z has {Z.shape[0]}, y has {len(y)}")
    if lam < 0:
        raise DataError(f"lambda must be >= 0, got {lam}")
    if not (np.isfinite(Z).all() and np.isfinite(y).all()):
        raise DataError("non-finite values in KRR inputs")
    K = rbf_kernel(Z, Z, sigma)
    A = K + lam * np.eye(len(y))
    try:
        cho = scipy.linalg.cho_factor(A, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise FitError(
            f"kernel system not positive definite at sigma={sigma:g}, "
            f"lambda={lam:g}: {exc}"
        ) from exc
    alpha = scipy.linalg.cho_solve(cho, y)
    resid = float(np.linalg.norm(A @ alpha - y))
    return KrrFit(
        alpha_weights=alpha,
        train_Z=Z,
        sigma=float(sigma),
        lam=float(lam),
        diagnostics={"system_residual": resid},
    )


def krr_predict(fit: KrrFit, Z_new) -> np.ndarray:
    Z_new = np.atleast_2d(np.asarray(Z_new, dtype=float))
    return rbf_kernel(Z_new, fit.train_Z, fit.sigma) @ fit.alpha_weights


def _sigma_grid(Z: np.ndarray) -> np.ndarray:
    D = cdist(Z, Z)
    off = D[np.triu_indices_from(D, k=1)]
    off = off[off > 0]
    if off.size == 0:
        raise DataError("all rows identical: no usable bandwidth scale")
    qs = np.quantile(off, np.arange(0.1, 0.91, 0.1))
    return np.unique(qs)


def krr_tune(
    Z,
    y,
    folds: int = 5,
    seed: int = 0,
    n_lambda: int = 30,
) -> tuple[float, float]:
    """Pick (sigma, lambda) by K-fold MSE.

    Bandwidths are the 0.1..0.9 quantiles of the pairwise training distances,
    penalties 30 log-spaced points in [1e-6, 1e2]. Validation predictions add
    back the training-fold mean of y, matching how the fit is deployed.
    Exact ties prefer the larger lambda, then the larger sigma.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    T = len(y)
    if Z.shape[0] != T:
        raise DataError(f"rows mismatch: Z has {Z.shape[0]}, y has {T}")
    if T < folds:
        raise DataError(f"{T} rows cannot form {folds} folds")
    sigmas = _sigma_grid(Z)
    lambdas = np.geomspace(1e-6, 1e2, n_lambda)
    D2 = cdist(Z, Z, metric="sqeuclidean")
    fold_id = kfold_split(T, k=folds, seed=seed)
    cv = np.zeros((len(sigmas), n_lambda))
    for si, sigma in enumerate(sigmas):
        K = np.exp(-D2 / (2.0 * sigma * sigma))
        sse = np.zeros(n_lambda)
        for f in range(folds):
            tr, va = fold_id != f, fold_id == f
            ybar = y[tr].mean()
            w, Q = np.linalg.eigh(K[np.ix_(tr, tr)])
            proj = Q.T @ (y[tr] - ybar)
            # alpha(lambda) for the whole grid from one eigendecomposition
            alphas = Q @ (proj[:, None] / (w[:, None] + lambdas[None, :]))
            pred = K[np.ix_(va, tr)] @ alphas + ybar
            sse += ((pred - y[va][:, None]) ** 2).sum(axis=0)
        cv[si] = sse / T
    best = (np.inf, 0, 0)
    for si in range(len(sigmas)):
        for li in range(n_lambda):
            score = cv[si, li]
            if score < best[0] or (
                score == best[0]
                and (lambdas[li], sigmas[si]) > (lambdas[best[2]], sigmas[best[1]])
            ):
                best = (score, si, li)
    _, si, li = best
    return float(sigmas[si]), float(lambdas[li])
