"""Monthly macro panel handling: load, transform, standardize, balance.

A panel is a rectangular monthly table of series values with an observation
mask. Series carry a transform code prescribing their stationarity transform;
after transforming, ragged edges and interior holes are filled by an EM
algorithm that alternates a rank-k principal-component fit with imputation of
the missing cells. A synthetic factor-panel generator supports testing.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from .errors import DataError

__all__ = [
    "ALLOWED_TCODES",
    "TCODE_DIFF_ORDER",
    "SeriesMeta",
    "Panel",
    "BalanceReport",
    "load_manifest",
    "load_panel",
    "apply_transform",
    "transform_panel",
    "standardize",
    "unstandardize",
    "balance_panel_em",
    "synth_dgp",
    "write_balanced",
    "read_balanced",
]

ALLOWED_TCODES: frozenset[int] = frozenset({1, 2, 4, 5, 6, 7})

# Rows lost at the start of a series by each transform code.
TCODE_DIFF_ORDER: dict[int, int] = {1: 0, 2: 1, 4: 0, 5: 1, 6: 2, 7: 2}

_LOG_TCODES = frozenset({4, 5, 6, 7})
_MISSING_TOKENS = frozenset({"", "NA", "NaN", "nan", "na"})
_DATE_RE = re.compile(r"^\d{4}-(0[1-9]|1[0-2])$")


@dataclass(frozen=True)
class SeriesMeta:
    """Descriptor of one panel series."""

    id: str
    group: int
    tcode: int
    start_date: pd.Period
    source: str = ""

    def __post_init__(self) -> None:
        if self.tcode not in ALLOWED_TCODES:
            raise DataError(f"series {self.id!r}: unknown transform code {self.tcode}")
        if not 1 <= int(self.group) <= 9:
            raise DataError(f"series {self.id!r}: group must be in 1..9, got {self.group}")


@dataclass
class Panel:
    """Rectangular monthly panel: values frame + per-series metadata.

    ``frame`` is a float DataFrame indexed by a consecutive monthly
    PeriodIndex; NaN marks a missing cell. ``meta`` lists one SeriesMeta per
    column, in column order. ``observed`` (optional) preserves the
    pre-balancing observation mask after EM fills the holes.
    """

    frame: pd.DataFrame
    meta: list[SeriesMeta]
    observed: pd.DataFrame | None = field(default=None)

    def __post_init__(self) -> None:
        idx = self.frame.index
        if not isinstance(idx, pd.PeriodIndex) or idx.freqstr not in ("M", "ME"):
            raise DataError("panel index must be a monthly PeriodIndex")
        if len(idx) < 2 or self.frame.shape[1] < 1:
            raise DataError("panel needs at least 2 rows and 1 series")
        steps = np.diff(idx.asi8)
        if np.any(steps != 1):
            raise DataError("non-consecutive months in panel index")
        ids = [m.id for m in self.meta]
        if list(self.frame.columns) != ids:
            raise DataError("panel columns do not match metadata ids")
        if len(set(ids)) != len(ids):
            raise DataError("duplicate series ids")

    @property
    def dates(self) -> pd.PeriodIndex:
        return self.frame.index

    @property
    def mask(self) -> pd.DataFrame:
        """True where a value is observed (finite)."""
        return pd.DataFrame(
            np.isfinite(self.frame.to_numpy(dtype=float)),
            index=self.frame.index,
            columns=self.frame.columns,
        )

    @property
    def shape(self) -> tuple[int, int]:
        return self.frame.shape

    def meta_for(self, series_id: str) -> SeriesMeta:
        for m in self.meta:
            if m.id == series_id:
                return m
        raise KeyError(series_id)


@dataclass
class BalanceReport:
    """Outcome of one EM balancing run."""

    iterations: int
    objective_trace: list[float]
    imputed_count: int
    k: int
    tol: float
    converged: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "iterations": self.iterations,
                "objective_trace": self.objective_trace,
                "imputed_count": self.imputed_count,
                "k": self.k,
                "tol": self.tol,
                "converged": self.converged,
            },
            indent=2,
        )


def _parse_period(text: str, context: str) -> pd.Period:
    if not _DATE_RE.match(text.strip()):
        raise DataError(f"{context}: unparseable year-month {text!r} (expected YYYY-MM)")
    return pd.Period(text.strip(), freq="M")


def load_manifest(path: str | Path) -> list[SeriesMeta]:
    """Read a series manifest CSV with header id,group,tcode,start_date,source."""
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    required = ["id", "group", "tcode", "start_date"]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(f"manifest missing columns: {missing}")
    out: list[SeriesMeta] = []
    for row in df.itertuples(index=False):
        sid = str(row.id).strip()
        if not sid:
            raise DataError("manifest contains an empty series id")
        try:
            group = int(row.group)
            tcode = int(row.tcode)
        except ValueError as exc:
            raise DataError(f"series {sid!r}: non-integer group/tcode") from exc
        start = _parse_period(str(row.start_date), f"series {sid!r} start_date")
        source = str(getattr(row, "source", "") or "")
        out.append(SeriesMeta(id=sid, group=group, tcode=tcode, start_date=start, source=source))
    if not out:
        raise DataError("manifest is empty")
    return out


def load_panel(
    data_csv: str | Path,
    manifest: Sequence[SeriesMeta],
    respect_start: bool = True,
) -> Panel:
    """Load a raw panel CSV against a manifest.

    The CSV must have a first ``date`` column in YYYY-MM plus one column per
    manifest id. Empty cells and NA/NaN tokens are missing; any other
    non-numeric cell is a hard error naming the offending series and date.
    Cells dated before a series' manifest start_date are forced missing
    unless ``respect_start`` is off (used when reading back balanced files,
    whose early cells are legitimately filled).
    """
    df = pd.read_csv(data_csv, dtype=str, keep_default_na=False)
    if df.shape[1] < 2 or df.columns[0] != "date":
        raise DataError("data CSV must start with a 'date' column")
    dates = pd.PeriodIndex([_parse_period(d, "data CSV date") for d in df["date"]], freq="M")
    if dates.has_duplicates:
        dup = dates[dates.duplicated()][0]
        raise DataError(f"duplicate dates in data CSV (first: {dup})")
    if len(dates) >= 2 and np.any(np.diff(dates.asi8) != 1):
        raise DataError("non-consecutive months in data CSV")
    missing_ids = [m.id for m in manifest if m.id not in df.columns]
    if missing_ids:
        raise DataError(f"missing series in data CSV: {missing_ids}")

    cols: dict[str, np.ndarray] = {}
    for m in manifest:
        raw = df[m.id].astype(str).str.strip()
        is_missing = raw.isin(_MISSING_TOKENS).to_numpy()
        texts = raw.to_numpy(dtype=object)
        texts[is_missing] = "nan"
        try:
            # numpy's parser is correctly rounded (exact text round-trips).
            col = texts.astype(np.float64)
        except ValueError:
            col = np.empty(texts.shape[0], dtype=float)
            for i, cell in enumerate(texts):
                try:
                    col[i] = float(cell)
                except ValueError:
                    raise DataError(
                        f"series {m.id!r} at {dates[i]}: non-numeric cell {raw.iloc[i]!r}"
                    ) from None
        if respect_start:
            col = col.copy()
            col[dates < m.start_date] = np.nan
        cols[m.id] = col
    frame = pd.DataFrame(cols, index=dates, columns=[m.id for m in manifest])
    return Panel(frame=frame, meta=list(manifest))


def _transform_full(x: np.ndarray, tcode: int, name: str = "") -> np.ndarray:
    """Transform with leading NaNs kept, so panel rows stay aligned."""
    label = f"series {name!r}" if name else "series"
    if tcode not in ALLOWED_TCODES:
        raise DataError(f"{label}: unknown transform code {tcode}")
    x = np.asarray(x, dtype=float)
    d = TCODE_DIFF_ORDER[tcode]
    if x.shape[0] <= d:
        raise DataError(f"{label}: length {x.shape[0]} too short for code {tcode}")
    if tcode in _LOG_TCODES:
        obs = x[~np.isnan(x)]
        if np.any(obs <= 0):
            raise DataError(f"{label}: non-positive value under log transform code {tcode}")
    out = np.full_like(x, np.nan)
    if tcode == 1:
        out[:] = x
    elif tcode == 2:
        out[1:] = x[1:] - x[:-1]
    elif tcode == 4:
        out[:] = np.log(x)
    elif tcode == 5:
        lx = np.log(x)
        out[1:] = lx[1:] - lx[:-1]
    elif tcode == 6:
        lx = np.log(x)
        out[2:] = lx[2:] - 2.0 * lx[1:-1] + lx[:-2]
    elif tcode == 7:
        g = np.full_like(x, np.nan)
        g[1:] = x[1:] / x[:-1] - 1.0
        out[2:] = g[2:] - g[1:-1]
    return out


def apply_transform(x: Sequence[float] | np.ndarray, tcode: int) -> np.ndarray:
    """Apply a transform code to one series.

    Codes: 1 none, 2 first difference, 4 log, 5 log difference, 6 second log
    difference, 7 difference of period growth rates. Output is shorter than
    the input by the code's differencing order (0, 1, 0, 1, 2, 2).
    """
    d = TCODE_DIFF_ORDER.get(tcode)
    if d is None:
        raise DataError(f"unknown transform code {tcode}")
    return _transform_full(np.asarray(x, dtype=float), tcode)[d:]


def transform_panel(panel: Panel) -> Panel:
    """Transform every series by its code and trim to a common start.

    The first max-d rows (max differencing order across the panel's codes)
    are dropped so the result is rectangular with all series aligned.
    """
    d_max = max(TCODE_DIFF_ORDER[m.tcode] for m in panel.meta)
    values = {
        m.id: _transform_full(panel.frame[m.id].to_numpy(), m.tcode, m.id)
        for m in panel.meta
    }
    frame = pd.DataFrame(values, index=panel.dates, columns=[m.id for m in panel.meta])
    frame = frame.iloc[d_max:]
    if frame.shape[0] < 2:
        raise DataError("panel too short after transform trimming")
    return Panel(frame=frame, meta=list(panel.meta))


def standardize(frame: pd.DataFrame) -> tuple[pd.DataFrame, pd.Series, pd.Series]:
    """Scale each column to mean 0, sample std 1 over its observed entries.

    Returns (scaled frame, means, stds). A column with zero variance (or
    fewer than 2 observations) is an error naming the series.
    """
    means = frame.mean(skipna=True)
    stds = frame.std(skipna=True, ddof=1)
    counts = frame.notna().sum()
    bad = counts < 2
    if bad.any():
        raise DataError(f"series {bad.index[bad][0]!r}: fewer than 2 observed values")
    zero = ~(stds > 0)
    if zero.any():
        raise DataError(f"series {zero.index[zero][0]!r}: zero variance")
    return (frame - means) / stds, means, stds


def unstandardize(frame: pd.DataFrame, means: pd.Series, stds: pd.Series) -> pd.DataFrame:
    return frame * stds + means


def balance_panel_em(
    panel: Panel,
    k: int = 8,
    tol: float = 1e-6,
    max_iter: int = 500,
) -> tuple[Panel, BalanceReport]:
    """Fill missing cells by EM around a rank-k principal-component fit.

    Missing cells start at the column mean. Each iteration standardizes the
    completed panel (means/stds recomputed), fits the best rank-k
    approximation by SVD, and overwrites the missing cells with the fitted
    values mapped back to the original scale. Observed cells are never
    touched. Stops when the largest absolute change in an imputed value drops
    below ``tol``, when ``max_iter`` is hit (reported as non-converged), or
    when the rank-k objective stops improving; the reported objective trace
    (sum of squared residuals of the rank-k fit on the standardized panel) is
    non-increasing.
    """
    X = panel.frame.to_numpy(dtype=float).copy()
    T, N = X.shape
    if not 1 <= k < min(T, N):
        raise DataError(f"balance rank k={k} out of range for a {T}x{N} panel")
    obs = ~np.isnan(X)
    if not obs.any(axis=0).all():
        j = int(np.flatnonzero(~obs.any(axis=0))[0])
        raise DataError(f"series {panel.meta[j].id!r}: no observed values")
    if not obs.any(axis=1).all():
        t = int(np.flatnonzero(~obs.any(axis=1))[0])
        raise DataError(f"row {panel.dates[t]}: no observed values")
    miss = ~obs
    imputed_count = int(miss.sum())

    col_mean = np.nanmean(np.where(obs, X, np.nan), axis=0)
    X[miss] = np.broadcast_to(col_mean, X.shape)[miss]

    trace: list[float] = []
    converged = False
    iterations = 0
    for _ in range(max_iter):
        m = X.mean(axis=0)
        s = X.std(axis=0, ddof=1)
        if np.any(s <= 0):
            j = int(np.flatnonzero(s <= 0)[0])
            raise DataError(f"series {panel.meta[j].id!r}: zero variance during balancing")
        Xs = (X - m) / s
        U, sv, Vt = np.linalg.svd(Xs, full_matrices=False)
        fit = (U[:, :k] * sv[:k]) @ Vt[:k]
        objective = float(np.sum((Xs - fit) ** 2))
        if trace and objective > trace[-1] + 1e-12:
            # Rescaling each iteration can stall EM at a plateau; stop there
            # rather than record a rising objective.
            converged = True
            break
        trace.append(objective)
        iterations += 1
        if imputed_count == 0:
            converged = True
            break
        filled = fit * s + m
        delta = float(np.max(np.abs(filled[miss] - X[miss])))
        X[miss] = filled[miss]
        if delta < tol:
            converged = True
            break

    frame = pd.DataFrame(X, index=panel.dates, columns=panel.frame.columns)
    balanced = Panel(
        frame=frame,
        meta=list(panel.meta),
        observed=pd.DataFrame(obs, index=panel.dates, columns=panel.frame.columns),
    )
    report = BalanceReport(
        iterations=iterations,
        objective_trace=trace,
        imputed_count=imputed_count,
        k=k,
        tol=tol,
        converged=converged,
    )
    return balanced, report


def synth_dgp(
    T: int,
    N: int,
    r: int,
    snr: float = 10.0,
    seed: int = 0,
    start: str = "1998-01",
) -> tuple[Panel, np.ndarray, np.ndarray]:
    """Generate a factor panel X = F Lambda' + e for testing.

    Factors and loadings are standard normal; the noise scale is set so the
    per-entry signal-to-noise ratio equals ``snr`` (signal variance is r for
    iid normal factors/loadings). Returns (panel, F, Lambda); deterministic
    given ``seed``. ``r=0`` yields pure unit-variance noise.
    """
    if r >= min(T, N):
        raise DataError(f"true factor count r={r} must be < min(T, N)")
    if snr <= 0:
        raise DataError("snr must be positive")
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((T, r))
    Lam = rng.standard_normal((N, r))
    noise = rng.standard_normal((T, N))
    scale = np.sqrt(r / snr) if r > 0 else 1.0
    X = F @ Lam.T + scale * noise
    dates = pd.period_range(start=start, periods=T, freq="M")
    meta = [
        SeriesMeta(id=f"S{j + 1:03d}", group=(j % 9) + 1, tcode=1, start_date=dates[0])
        for j in range(N)
    ]
    frame = pd.DataFrame(X, index=dates, columns=[m.id for m in meta])
    return Panel(frame=frame, meta=meta), F, Lam


def write_balanced(panel: Panel, report: BalanceReport, csv_path: str | Path) -> Path:
    """Write a balanced panel CSV plus a sidecar JSON report."""
    csv_path = Path(csv_path)
    out = panel.frame.copy()
    out.insert(0, "date", [str(p) for p in panel.dates])
    # %.17g round-trips float64 exactly through text.
    out.to_csv(csv_path, index=False, float_format="%.17g")
    report_path = csv_path.with_suffix(".report.json")
    report_path.write_text(report.to_json() + "\n")
    return report_path


def read_balanced(csv_path: str | Path, manifest: Sequence[SeriesMeta]) -> Panel:
    """Read a balanced panel CSV written by :func:`write_balanced`."""
    panel = load_panel(csv_path, manifest, respect_start=False)
    if panel.frame.isna().any().any():
        raise DataError("balanced panel file contains missing cells")
    return panel
