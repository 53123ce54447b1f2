"""Principal-component factors for large panels.

Extraction uses the F'F/T = I_k normalization, so loadings are X'F/T. Factor
count selection uses the PC_p2 information criterion; interpretation
diagnostics report each factor's marginal R^2 per series.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DataError
from .panel import Panel, standardize

__all__ = [
    "FactorModel",
    "FactorDiagnostics",
    "extract_factors",
    "pc_p2",
    "marginal_r2",
    "recursive_factor_count",
    "factor_summary",
]


@dataclass
class FactorModel:
    """Rank-k principal-component fit of a standardized panel."""

    factors: pd.DataFrame        # T x k, columns F1..Fk, F'F/T = I_k
    loadings: pd.DataFrame       # N x k, indexed by series id
    eigenvalues: np.ndarray      # full spectrum of X'X/(NT), descending
    k: int

    @property
    def total_r2(self) -> float:
        """Share of panel variance captured by the k factors."""
        s = float(self.eigenvalues.sum())
        return float(self.eigenvalues[: self.k].sum()) / s if s > 0 else 0.0


@dataclass
class FactorDiagnostics:
    """Marginal explanatory power of each factor for each series."""

    mr2: pd.DataFrame            # N x k, entry (i, j): R2 gain of factor j for series i
    avg_mr2: pd.Series           # column means of mr2
    total_r2: float              # sum of avg_mr2


def _as_matrix(X) -> tuple[np.ndarray, list[str], pd.Index | None]:
    if isinstance(X, pd.DataFrame):
        return X.to_numpy(dtype=float), [str(c) for c in X.columns], X.index
    arr = np.asarray(X, dtype=float)
    return arr, [f"x{j}" for j in range(arr.shape[1])], None


def extract_factors(X, k: int) -> FactorModel:
    """Extract the first k principal components of a standardized panel.

    Returns factors normalized so F'F/T = I_k and loadings Lambda = X'F/T.
    Each factor's sign is canonicalized: the series with the largest absolute
    loading on it gets a positive loading, so outputs are reproducible across
    linear-algebra backends.
    """
    arr, names, index = _as_matrix(X)
    T, N = arr.shape
    if not np.all(np.isfinite(arr)):
        raise DataError("factor extraction requires a fully observed panel")
    if not 1 <= k <= min(T, N):
        raise DataError(f"factor count k={k} out of range for a {T}x{N} panel")
    col_means = arr.mean(axis=0)
    if np.max(np.abs(col_means)) > 1e-6:
        raise DataError("input does not look standardized (non-zero column means)")
    U, sv, _ = np.linalg.svd(arr, full_matrices=False)
    F = np.sqrt(T) * U[:, :k]
    Lam = arr.T @ F / T
    for j in range(k):
        anchor = int(np.argmax(np.abs(Lam[:, j])))
        if Lam[anchor, j] < 0:
            F[:, j] = -F[:, j]
            Lam[:, j] = -Lam[:, j]
    eigenvalues = sv**2 / (T * N)
    fcols = [f"F{j + 1}" for j in range(k)]
    factors = pd.DataFrame(F, columns=fcols)
    if index is not None:
        factors.index = index
    loadings = pd.DataFrame(Lam, index=names, columns=fcols)
    return FactorModel(factors=factors, loadings=loadings, eigenvalues=eigenvalues, k=k)


def _v_curve(X: np.ndarray, kmax: int) -> np.ndarray:
    """V(k) for k = 0..kmax: mean squared residual of the rank-k fit."""
    sv = np.linalg.svd(X, compute_uv=False)
    T, N = X.shape
    eig = sv**2 / (T * N)
    total = eig.sum()
    return total - np.concatenate([[0.0], np.cumsum(eig[:kmax])])


def pc_p2(X, kmax: int = 15) -> int:
    """Select the factor count by the PC_p2 information criterion.

    Minimizes V(k) + k * sigma2 * ((N+T)/(N*T)) * ln(min(N,T)) over
    k = 1..kmax, where V(k) is the mean squared residual of the rank-k fit
    and sigma2 = V(kmax). Scale-free on its input; ties go to the smaller k.
    """
    arr, _, _ = _as_matrix(X)
    T, N = arr.shape
    if not np.all(np.isfinite(arr)):
        raise DataError("factor selection requires a fully observed panel")
    if not 1 <= kmax <= min(T, N) // 2:
        raise DataError(f"kmax={kmax} out of range (need 1 <= kmax <= min(T,N)/2)")
    v = _v_curve(arr, kmax)
    sigma2 = v[kmax]
    penalty = sigma2 * ((N + T) / (N * T)) * np.log(min(N, T))
    ks = np.arange(1, kmax + 1)
    crit = v[1:] + ks * penalty
    return int(ks[np.argmin(crit)])


def marginal_r2(X, fm: FactorModel) -> FactorDiagnostics:
    """Per-series marginal R^2 of each factor.

    Entry (i, j) is R^2 of series i regressed on factors 1..j minus the same
    with factors 1..j-1 (zero for j=0). Row sums telescope to the R^2 of the
    full k-factor regression.
    """
    arr, names, _ = _as_matrix(X)
    T, N = arr.shape
    F = fm.factors.to_numpy(dtype=float)
    if F.shape[0] != T or list(fm.loadings.index) != names:
        raise DataError("factor model does not match the panel it came from")
    out = np.empty((N, fm.k))
    for i in range(N):
        x = arr[:, i]
        tss = float(x @ x)
        r2_prev = 0.0
        for j in range(1, fm.k + 1):
            coef, *_ = np.linalg.lstsq(F[:, :j], x, rcond=None)
            resid = x - F[:, :j] @ coef
            r2 = 1.0 - float(resid @ resid) / tss
            out[i, j - 1] = r2 - r2_prev
            r2_prev = r2
    mr2 = pd.DataFrame(out, index=names, columns=list(fm.factors.columns))
    avg = mr2.mean(axis=0)
    return FactorDiagnostics(mr2=mr2, avg_mr2=avg, total_r2=float(avg.sum()))


def recursive_factor_count(panel: Panel, start: str | pd.Period, kmax: int = 15) -> pd.DataFrame:
    """PC_p2 factor count re-selected each month from ``start`` onward.

    For each month m from start to the panel end, the criterion runs on the
    standardized subpanel of rows up to m. Returns a frame with columns
    (date, k, total_r2); requires at least 24 months of history before start.
    """
    start = pd.Period(start, freq="M")
    dates = panel.dates
    if start not in dates:
        raise DataError(f"start {start} outside panel range")
    n_history = int((dates < start).sum())
    if n_history < 24:
        raise DataError(f"need >= 24 months of history before {start}, have {n_history}")
    rows = []
    for date in dates[dates >= start]:
        sub = panel.frame.loc[:date]
        scaled, _, _ = standardize(sub)
        X = scaled.to_numpy(dtype=float)
        k_sel = pc_p2(X, kmax=min(kmax, min(X.shape) // 2))
        sv = np.linalg.svd(X, compute_uv=False)
        eig = sv**2
        rows.append(
            {"date": date, "k": k_sel, "total_r2": float(eig[:k_sel].sum() / eig.sum())}
        )
    return pd.DataFrame(rows)


def factor_summary(
    X,
    fm: FactorModel,
    groups: dict[str, int] | None = None,
    top: int = 10,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """Interpretation tables: per-factor average mR^2 and top-loading series.

    Returns (summary, top_series): the first has one row per factor with its
    average marginal R^2 and the cumulative total; the second lists each
    factor's ``top`` series by marginal R^2 with their group ids.
    """
    diag = marginal_r2(X, fm)
    summary = pd.DataFrame(
        {
            "factor": list(diag.mr2.columns),
            "avg_mr2": diag.avg_mr2.to_numpy(),
            "cum_total_r2": np.cumsum(diag.avg_mr2.to_numpy()),
        }
    )
    rows = []
    for col in diag.mr2.columns:
        ranked = diag.mr2[col].sort_values(ascending=False).head(top)
        for rank, (sid, val) in enumerate(ranked.items(), start=1):
            rows.append(
                {
                    "factor": col,
                    "rank": rank,
                    "series": sid,
                    "group": (groups or {}).get(sid, 0),
                    "mr2": float(val),
                }
            )
    return summary, pd.DataFrame(rows)
