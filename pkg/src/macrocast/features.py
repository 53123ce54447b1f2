"""Targets, lag matrices, MARX rotations, and per-model design matrices.

Lag indexing convention, used everywhere: "the P most recent values" at
origin t are x_t, x_{t-1}, ..., x_{t-P+1}, named ``<series>_l0 ... _l{P-1}``.
An off-by-one here silently corrupts every downstream model, so the
convention lives in exactly one place (:func:`build_lags`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import DataError

__all__ = [
    "TargetSeries",
    "FeatureSet",
    "build_target",
    "period_series",
    "build_lags",
    "marx",
    "marx_invert",
    "assemble_design",
]


@dataclass
class TargetSeries:
    """h-period-average growth target, indexed by forecast origin.

    ``values[t]`` is the outcome realized at t+h: (1/h)*ln(Y_{t+h}/Y_t) when
    ``use_log``, else (1/h)*(Y_{t+h} - Y_t). Defined only where both levels
    are observed.
    """

    target_id: str
    h: int
    values: pd.Series
    use_log: bool


@dataclass(frozen=True)
class FeatureSet:
    """Which blocks enter a model's design matrix, and how deep.

    Blocks appear in the fixed order [y-lags | factor-lags | X | MARX].
    """

    py: int = 6
    pf: int = 6
    k: int = 8
    include_x: bool = False
    include_marx: bool = False
    marx_p: int = 6
    include_y: bool = True
    include_f: bool = True

    def n_columns(self, n_series: int) -> int:
        n = 0
        if self.include_y:
            n += self.py
        if self.include_f:
            n += self.k * self.pf
        if self.include_x:
            n += n_series
        if self.include_marx:
            n += n_series * self.marx_p
        return n


def build_target(Y: pd.Series, h: int, use_log: bool = True, target_id: str | None = None) -> TargetSeries:
    """Average h-period-ahead growth (or change) of a level series.

    ``use_log`` gives (1/h)*ln(Y_{t+h}/Y_t); otherwise (1/h)*(Y_{t+h}-Y_t),
    for series that can go non-positive. Values are indexed by the origin t.
    """
    if h < 1:
        raise DataError(f"horizon must be >= 1, got {h}")
    if len(Y) <= h:
        raise DataError(f"horizon {h} exceeds sample of length {len(Y)}")
    y = Y.astype(float)
    if use_log:
        obs = y.dropna()
        if (obs <= 0).any():
            bad = obs.index[obs <= 0][0]
            raise DataError(f"non-positive level at {bad} under log target")
        base = np.log(y)
    else:
        base = y
    vals = (base.shift(-h) - base) / h
    vals = vals.dropna()
    return TargetSeries(
        target_id=target_id or str(Y.name or "y"),
        h=h,
        values=vals,
        use_log=use_log,
    )


def period_series(Y: pd.Series, use_log: bool = True, name: str = "y") -> pd.Series:
    """One-period growth (or change), indexed by the date it is observed.

    The value dated t is ln(Y_t/Y_{t-1}) (or the plain difference), i.e. the
    most recent growth observation available at origin t; this series feeds
    the y-lag block and the linear parts of coefficient-path models.
    """
    t = build_target(Y, h=1, use_log=use_log, target_id=name)
    out = t.values.copy()
    out.index = out.index + 1
    out.name = name
    return out


def build_lags(x: pd.Series | pd.DataFrame, P: int) -> pd.DataFrame:
    """Matrix of the P most recent values of each input column.

    Row t holds x_t .. x_{t-P+1} as columns ``<name>_l0 .. <name>_l{P-1}``;
    rows where any lag is unavailable are dropped.
    """
    if P < 1:
        raise DataError(f"lag depth must be >= 1, got {P}")
    if isinstance(x, pd.Series):
        frame = x.to_frame(name=str(x.name or "x"))
    else:
        frame = x
    if P >= frame.shape[0]:
        raise DataError(f"lag depth {P} >= sample length {frame.shape[0]}")
    blocks = {}
    for col in frame.columns:
        for j in range(P):
            blocks[f"{col}_l{j}"] = frame[col].shift(j)
    out = pd.DataFrame(blocks, index=frame.index)
    return out.dropna()


def marx(X: pd.Series | pd.DataFrame, P: int) -> pd.DataFrame:
    """Moving-average rotation of each column's lags.

    The p-th feature is the p-term average of current and past values:
    MARX_p(t) = (1/p) * sum_{j<p} x_{t-j}, columns ``<name>_m1 .. _m{P}``.
    This is an invertible lower-triangular map of the raw lags, which changes
    the implicit shrinkage prior of downstream learners (toward coefficients
    decaying smoothly across lags) without changing the information content.
    """
    if P < 1:
        raise DataError(f"MARX depth must be >= 1, got {P}")
    if isinstance(X, pd.Series):
        frame = X.to_frame(name=str(X.name or "x"))
    else:
        frame = X
    if P >= frame.shape[0]:
        raise DataError(f"MARX depth {P} >= sample length {frame.shape[0]}")
    blocks = {}
    for col in frame.columns:
        running = frame[col].copy() * 0.0
        for p in range(1, P + 1):
            running = running + frame[col].shift(p - 1)
            blocks[f"{col}_m{p}"] = running / p
    out = pd.DataFrame(blocks, index=frame.index)
    return out.dropna()


def marx_invert(M: np.ndarray) -> np.ndarray:
    """Recover raw lags (x_t .. x_{t-P+1}) from one series' MARX block.

    Inverse of the lower-triangular rotation: x_{t-p+1} = p*m_p - (p-1)*m_{p-1}.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    P = M.shape[1]
    out = np.empty_like(M)
    out[:, 0] = M[:, 0]
    for p in range(2, P + 1):
        out[:, p - 1] = p * M[:, p - 1] - (p - 1) * M[:, p - 2]
    return out


def assemble_design(
    fs: FeatureSet,
    y: pd.Series | None,
    factors: pd.DataFrame | None,
    X: pd.DataFrame | None,
    origins: pd.PeriodIndex | None = None,
) -> pd.DataFrame:
    """Concatenate feature blocks in the fixed order [y | factors | X | MARX].

    ``y`` is the per-period target series (see :func:`period_series`),
    ``factors`` the factor matrix F1..Fk dated like the panel, ``X`` the
    transformed panel itself (current values; its lag structure enters only
    through MARX). Rows keep only origins where every block is complete;
    row t never touches data dated after t.
    """
    blocks: list[pd.DataFrame] = []
    if fs.include_y:
        if y is None:
            raise DataError("recipe includes y-lags but no y series supplied")
        blocks.append(build_lags(y.rename("y"), fs.py))
    if fs.include_f:
        if factors is None:
            raise DataError("recipe includes factor lags but no factors supplied")
        if factors.shape[1] < fs.k:
            raise DataError(f"recipe needs {fs.k} factors, got {factors.shape[1]}")
        blocks.append(build_lags(factors.iloc[:, : fs.k], fs.pf))
    if fs.include_x:
        if X is None:
            raise DataError("recipe includes X but no panel supplied")
        blocks.append(X.dropna())
    if fs.include_marx:
        if X is None:
            raise DataError("recipe includes MARX but no panel supplied")
        blocks.append(marx(X, fs.marx_p))
    if not blocks:
        raise DataError("empty feature recipe")
    out = pd.concat(blocks, axis=1, join="inner")
    if origins is not None:
        out = out.loc[out.index.intersection(origins)]
    if out.isna().any().any():
        raise DataError("design matrix has missing cells after assembly")
    return out
