"""Expanding-window backtest: runner, forecast records, and comparison tables.

The runner walks forecast origins forward from a fixed start date. At each
origin it sees only data dated at or before that origin: the regressor
panel is re-standardized, factors are re-extracted, and every model is
refit on the data available then. Forecast errors therefore accumulate the
way they would have in real time.

Model failures at an origin are recorded (empty forecast plus the error
message) and the run continues; they are never silently filled. Records
carry enough to rebuild every accuracy table offline, and the whole run is
a pure function of (plan, data), so a single origin can be recomputed
bit-for-bit and thread count cannot change any number.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd

from ._rng import child_seed
from .errors import DataError, FitError
from .factors import extract_factors
from .features import assemble_design, build_target, period_series
from .panel import Panel, standardize
from .registry import (
    ModelSpec,
    fit_predict,
    forecast_direct,
    model_registry,
    needs_design,
    needs_tuning,
    tune_model,
)

__all__ = [
    "TargetSpec",
    "ExperimentPlan",
    "ForecastRecord",
    "EvalTable",
    "WINDOWS",
    "window_mask",
    "newey_west_lrv",
    "dm_test",
    "run_poos",
    "records_frame",
    "write_records",
    "read_records",
    "build_eval_table",
    "format_cell",
    "render_table",
]


# ------------------------------------------------------------ accuracy test


def newey_west_lrv(d, lags: int) -> float:
    """Long-run variance with Bartlett weights over ``lags`` autocovariances.

    ``lags`` = 0 is the plain (population) variance. Sample autocovariances
    use the 1/n convention, which keeps the estimate positive semidefinite.
    """
    d = np.asarray(d, dtype=float).ravel()
    n = d.size
    if n < 2:
        raise DataError(f"need at least 2 observations, got {n}")
    if lags < 0:
        raise DataError(f"lags must be >= 0, got {lags}")
    dc = d - d.mean()
    lrv = float(dc @ dc) / n
    L = min(lags, n - 1)
    for j in range(1, L + 1):
        gamma = float(dc[j:] @ dc[:-j]) / n
        lrv += 2.0 * (1.0 - j / (L + 1.0)) * gamma
    return lrv


def dm_test(d, h: int = 1) -> tuple[float, float]:
    """Equal-accuracy test on a loss-differential series.

    ``d`` is per-origin loss of the candidate minus loss of the benchmark.
    The statistic is mean(d) over its long-run standard error with h-1
    Bartlett lags (direct h-step forecasts overlap h-1 periods), compared
    to a standard normal, two sided. Degenerate series resolve to the
    sensible boundaries: identical losses give (0, 1); constant nonzero
    differentials give p = 0.
    """
    d = np.asarray(d, dtype=float).ravel()
    if d.size < 10:
        raise DataError(f"need at least 10 loss differentials, got {d.size}")
    if h < 1:
        raise DataError(f"horizon must be >= 1, got {h}")
    if not np.isfinite(d).all():
        raise DataError("loss differentials contain non-finite values")
    mean = float(d.mean())
    lrv = newey_west_lrv(d, h - 1)
    if lrv <= 0.0:
        if mean == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, mean), 0.0
    stat = mean / math.sqrt(lrv / d.size)
    p = math.erfc(abs(stat) / math.sqrt(2.0))
    return float(stat), float(p)


# ------------------------------------------------------------ windows

WINDOWS: dict[str, tuple[str, str | None]] = {
    "full": ("2008-01", None),
    "restricted": ("2011-01", None),
    "covid": ("2020-01", None),
    "quiet": ("2011-01", "2019-12"),
    "precovid": ("2008-01", "2019-12"),
}


def window_mask(origins, window: str) -> np.ndarray:
    """Boolean mask selecting the origins inside a named evaluation window.

    Bounds are calendar dates; windows clip automatically to whatever span
    the records actually cover.
    """
    origins = pd.PeriodIndex(origins)
    if window not in WINDOWS:
        raise DataError(f"unknown window {window!r}; choose from {sorted(WINDOWS)}")
    start, end = WINDOWS[window]
    mask = origins >= pd.Period(start, freq=origins.freq)
    if end is not None:
        mask &= origins <= pd.Period(end, freq=origins.freq)
    return np.asarray(mask)


# ------------------------------------------------------------ plan types


def _as_period(value, what: str) -> pd.Period:
    if isinstance(value, pd.Period):
        return value
    try:
        return pd.Period(value, freq="M")
    except Exception as exc:
        raise DataError(f"cannot parse {what} {value!r} as a monthly period") from exc


@dataclass(frozen=True)
class TargetSpec:
    """One forecasted series: its id, growth convention, and sample end.

    ``use_log`` selects log-growth targets; series that can go non-positive
    must use plain changes. ``end`` (default: the last finite raw value)
    caps the evaluation sample, e.g. when a series stops being comparable.
    """

    target_id: str
    use_log: bool = True
    end: pd.Period | None = None

    def __post_init__(self):
        if not self.target_id:
            raise DataError("target_id must be non-empty")
        if self.end is not None:
            object.__setattr__(self, "end", _as_period(self.end, "end"))


@dataclass(frozen=True)
class ExperimentPlan:
    """Everything that determines a backtest besides the data itself.

    ``retune_every`` spaces out hyperparameter searches: parameters tuned at
    an aligned origin are reused for the following months, and the aligned
    origin is a pure function of the calendar, so recomputing any single
    origin reproduces the full run's numbers exactly. ``overrides`` maps a
    model name to parameter updates (smaller grids, fewer trees) layered on
    the catalog defaults. ``models`` defaults to the full catalog.
    """

    targets: tuple[TargetSpec, ...]
    horizons: tuple[int, ...] = (1, 2, 3)
    models: tuple[ModelSpec, ...] | None = None
    poos_start: Any = "2008-01"
    retune_every: int = 1
    seed: int = 0
    n_factors: int = 8
    overrides: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self):
        targets = tuple(self.targets)
        if not targets:
            raise DataError("plan needs at least one target")
        for t in targets:
            if not isinstance(t, TargetSpec):
                raise DataError(f"targets must be TargetSpec, got {type(t).__name__}")
        if len({t.target_id for t in targets}) != len(targets):
            raise DataError("duplicate target ids in plan")
        object.__setattr__(self, "targets", targets)
        hs = tuple(int(h) for h in self.horizons)
        if not hs or any(h < 1 for h in hs) or len(set(hs)) != len(hs):
            raise DataError(f"horizons must be distinct integers >= 1, got {self.horizons}")
        object.__setattr__(self, "horizons", hs)
        if self.models is not None:
            ms = tuple(self.models)
            if not ms:
                raise DataError("empty model list; omit it to run the full catalog")
            if len({m.name for m in ms}) != len(ms):
                raise DataError("duplicate model names in plan")
            object.__setattr__(self, "models", ms)
        object.__setattr__(self, "poos_start", _as_period(self.poos_start, "poos_start"))
        if self.retune_every < 1:
            raise DataError(f"retune_every must be >= 1, got {self.retune_every}")
        if self.n_factors < 1:
            raise DataError(f"n_factors must be >= 1, got {self.n_factors}")


@dataclass(frozen=True)
class ForecastRecord:
    """One model's forecast at one origin, with the realized outcome.

    ``forecast`` is NaN exactly when the model failed at that origin, in
    which case ``error`` holds the message. Records exist only for origins
    whose outcome is observable in the data.
    """

    target: str
    model: str
    h: int
    origin: pd.Period
    forecast: float
    realized: float
    error: str = ""


def records_frame(records) -> pd.DataFrame:
    """Records as a DataFrame with one row per (target, model, h, origin)."""
    if isinstance(records, pd.DataFrame):
        return records
    if not records:
        return pd.DataFrame(columns=list(_RECORD_COLUMNS) + ["error"])
    return pd.DataFrame(
        {
            "target": [r.target for r in records],
            "model": [r.model for r in records],
            "h": [r.h for r in records],
            "origin": pd.PeriodIndex([r.origin for r in records]),
            "forecast": [r.forecast for r in records],
            "realized": [r.realized for r in records],
            "error": [r.error for r in records],
        }
    )


_RECORD_COLUMNS = ("target", "model", "h", "origin", "forecast", "realized")


def write_records(records, path, append: bool = False) -> None:
    """Write records as CSV with the fixed six-column schema.

    Floats are written with 17 significant digits so a read-back reproduces
    them bit for bit; a failed forecast is an empty field. ``append`` adds
    rows to an existing file without repeating the header.
    """
    mode = "a" if append else "w"
    with open(path, mode, newline="", encoding="utf-8") as fh:
        need_header = fh.tell() == 0
        w = csv.writer(fh)
        if need_header:
            w.writerow(_RECORD_COLUMNS)
        for r in records:
            fc = "" if not math.isfinite(r.forecast) else format(r.forecast, ".17g")
            w.writerow([r.target, r.model, r.h, str(r.origin), fc, format(r.realized, ".17g")])


def read_records(path) -> list[ForecastRecord]:
    out: list[ForecastRecord] = []
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or tuple(header) != _RECORD_COLUMNS:
            raise DataError(f"unexpected records header {header!r}")
        for row in rd:
            if len(row) != len(_RECORD_COLUMNS):
                raise DataError(f"malformed records row {row!r}")
            fc = float(row[4]) if row[4] else float("nan")
            out.append(
                ForecastRecord(row[0], row[1], int(row[2]), pd.Period(row[3], freq="M"), fc, float(row[5]))
            )
    return out


# ------------------------------------------------------------ runner


def _tune_origin(o: pd.Period, start: pd.Period, every: int) -> pd.Period:
    return start + ((o - start).n // every) * every


def run_poos(
    plan: ExperimentPlan,
    panel: Panel,
    raw: pd.DataFrame | None = None,
    threads: int = 1,
    origins=None,
) -> list[ForecastRecord]:
    """Run the expanding-window backtest described by ``plan``.

    ``panel`` is the balanced, transformed regressor panel; ``raw`` holds
    the level series the targets are built from (default: the panel frame
    itself, for synthetic data stored in levels). ``origins`` restricts the
    run to the given origins without changing any derived seed or tuning
    alignment, so a one-origin rerun reproduces the full run bit for bit.

    Records come back in a fixed order (target, then horizon, then origin,
    then catalog order) regardless of ``threads``.
    """
    models = tuple(plan.models) if plan.models is not None else model_registry()
    X_frame = panel.frame
    raw_frame = raw if raw is not None else panel.frame
    if not isinstance(raw_frame.index, pd.PeriodIndex):
        raise DataError("raw data must be indexed by periods")
    missing = [t.target_id for t in plan.targets if t.target_id not in raw_frame.columns]
    if missing:
        raise DataError(f"targets not in the raw data: {missing}")
    if threads < 1:
        raise DataError(f"threads must be >= 1, got {threads}")
    start = plan.poos_start

    requested = None
    if origins is not None:
        requested = {_as_period(o, "origin") for o in origins}

    any_tuning = any(needs_tuning(m) for m in models)
    need_factors = any(
        m.kind == "ardi_bic" or (m.features is not None and m.features.include_f) for m in models
    )

    # one task per (target, horizon); its origins are those with an
    # observable outcome: origin >= start and origin + h inside the sample
    task_defs = []
    factor_origins: set[pd.Period] = set()
    for ti, tspec in enumerate(plan.targets):
        s = raw_frame[tspec.target_id]
        obs = s.dropna()
        if obs.empty:
            raise DataError(f"target {tspec.target_id!r} has no observed values")
        end = tspec.end if tspec.end is not None else obs.index[-1]
        s_full = s.loc[:end]
        for h in plan.horizons:
            if len(s_full.dropna()) <= h:
                continue
            realized_all = build_target(s_full, h, tspec.use_log, tspec.target_id).values
            task_origins = [o for o in realized_all.index if o >= start]
            if requested is not None:
                task_origins = [o for o in task_origins if o in requested]
            if not task_origins:
                continue
            task_defs.append((ti, tspec, h, task_origins, realized_all))
            if need_factors:
                factor_origins.update(task_origins)
                if any_tuning and plan.retune_every > 1:
                    factor_origins.update(
                        _tune_origin(o, start, plan.retune_every) for o in task_origins
                    )

    factor_map: dict[pd.Period, tuple[pd.DataFrame | None, str]] = {}
    for o in sorted(factor_origins):
        try:
            subs, _, _ = standardize(X_frame.loc[:o])
            fm = extract_factors(subs, plan.n_factors)
            factor_map[o] = (fm.factors, "")
        except (DataError, np.linalg.LinAlgError) as exc:
            factor_map[o] = (None, f"factor extraction failed: {exc}")

    def origin_context(tspec: TargetSpec, h: int, o: pd.Period) -> dict:
        s_sub = raw_frame[tspec.target_id].loc[:o]
        y_per = period_series(s_sub, use_log=tspec.use_log)
        tgt = build_target(s_sub, h, tspec.use_log, tspec.target_id).values
        factors, ferr = factor_map.get(o, (None, "factor block not computed"))
        return {
            "y_per": y_per,
            "tgt": tgt,
            "X": X_frame.loc[:o],
            "factors": factors,
            "factor_error": ferr,
            "designs": {},
        }

    def design_slices(fs, ctx, o, need_next=True):
        Z = ctx["designs"].get(fs)
        if Z is None:
            if fs.include_f and ctx["factors"] is None:
                raise DataError(ctx["factor_error"])
            Z = assemble_design(fs, ctx["y_per"], ctx["factors"], ctx["X"])
            ctx["designs"][fs] = Z
        rows = Z.index.intersection(ctx["tgt"].index)
        if len(rows) == 0:
            raise DataError("no usable training rows at this origin")
        Ztr, ytr = Z.loc[rows], ctx["tgt"].loc[rows]
        if not need_next:
            return Ztr, ytr, None
        if o not in Z.index:
            raise DataError(f"design row unavailable at origin {o}")
        return Ztr, ytr, Z.loc[[o]]

    def run_task(ti, tspec, h, task_origins, realized_all):
        recs: list[ForecastRecord] = []
        tuned_cache: dict[int, tuple[pd.Period, Any]] = {}
        tune_ctx: dict[pd.Period, dict] = {}

        def forecast_one(m, params, ctx, o, o_idx):
            if not needs_design(m):
                if m.kind == "ardi_bic" and ctx["factors"] is None:
                    raise DataError(ctx["factor_error"])
                return forecast_direct(m, params, ctx["y_per"], ctx["factors"], ctx["tgt"], o)
            Ztr, ytr, z_next = design_slices(m.features, ctx, o)
            tuned = None
            if needs_tuning(m):
                to = _tune_origin(o, start, plan.retune_every)
                hit = tuned_cache.get(m.uid)
                if hit is not None and hit[0] == to:
                    tuned = hit[1]
                else:
                    if to == o:
                        Zt, yt = Ztr, ytr
                    else:
                        tctx = tune_ctx.get(to)
                        if tctx is None:
                            tune_ctx.clear()
                            tctx = origin_context(tspec, h, to)
                            tune_ctx[to] = tctx
                        Zt, yt, _ = design_slices(m.features, tctx, to, need_next=False)
                    tuned = tune_model(m, params, Zt, yt, child_seed(plan.seed, m.uid, ti, h, (to - start).n, 1))
                    tuned_cache[m.uid] = (to, tuned)
            return fit_predict(
                m, params, tuned, Ztr, ytr, z_next, child_seed(plan.seed, m.uid, ti, h, o_idx, 0)
            )

        for o in task_origins:
            o_idx = (o - start).n
            realized = float(realized_all.loc[o])
            try:
                ctx = origin_context(tspec, h, o)
            except (DataError, FitError) as exc:
                msg = str(exc)
                recs.extend(
                    ForecastRecord(tspec.target_id, m.name, h, o, float("nan"), realized, msg)
                    for m in models
                )
                continue
            for m in models:
                params = {**m.params, **(plan.overrides.get(m.name) or {})}
                try:
                    fc = forecast_one(m, params, ctx, o, o_idx)
                    rec = ForecastRecord(tspec.target_id, m.name, h, o, float(fc), realized)
                except (DataError, FitError) as exc:
                    rec = ForecastRecord(
                        tspec.target_id, m.name, h, o, float("nan"), realized, str(exc)
                    )
                recs.append(rec)
        return recs

    if threads > 1 and len(task_defs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            chunks = list(ex.map(lambda td: run_task(*td), task_defs))
    else:
        chunks = [run_task(*td) for td in task_defs]
    return [r for chunk in chunks for r in chunk]


# ------------------------------------------------------------ tables


def format_cell(ratio: float, p: float) -> str:
    """Render one table cell: two-decimal relative MSE plus significance stars."""
    if not math.isfinite(ratio):
        return ""
    stars = ""
    if math.isfinite(p):
        if p < 0.01:
            stars = "***"
        elif p < 0.05:
            stars = "**"
        elif p < 0.10:
            stars = "*"
    return f"{ratio:.2f}{stars}"


@dataclass(frozen=True)
class EvalTable:
    """Relative-MSE table for one (window, horizon) slice.

    ``ratios`` holds MSE(model)/MSE(benchmark) over the origins both have,
    ``pvalues`` the equal-accuracy test on the same origins, ``cells`` the
    rendered strings, ``counts`` the number of origins behind each cell.
    Missing cells (a model with no usable forecasts) stay NaN/empty.
    """

    window: str
    h: int
    benchmark: str
    ratios: pd.DataFrame
    pvalues: pd.DataFrame
    cells: pd.DataFrame
    counts: pd.DataFrame

    def to_json(self) -> str:
        def tidy(df):
            return {c: {m: (None if not math.isfinite(v) else v) for m, v in df[c].items()} for c in df.columns}

        return json.dumps(
            {
                "window": self.window,
                "h": self.h,
                "benchmark": self.benchmark,
                "ratios": tidy(self.ratios),
                "pvalues": tidy(self.pvalues),
                "cells": {c: dict(self.cells[c]) for c in self.cells.columns},
                "counts": {c: {m: int(v) for m, v in self.counts[c].items()} for c in self.counts.columns},
            }
        )


def build_eval_table(
    records,
    h: int,
    window: str = "full",
    benchmark: str = "AR,BIC",
    targets=None,
    models=None,
) -> EvalTable:
    """Relative-MSE-vs-benchmark table over one window and horizon.

    Each cell compares a model to the benchmark on exactly the origins
    where both produced forecasts whose outcome lies in the window. The
    benchmark row is identically 1.00 with no stars. A missing benchmark
    for some target is an error; a missing model just leaves its cell
    empty.
    """
    df = records_frame(records)
    df = df[df["h"] == int(h)]
    if df.empty:
        raise DataError(f"no records at horizon {h}")
    df = df.loc[window_mask(df["origin"], window)]
    if df.empty:
        raise DataError(f"no records in window {window!r} at horizon {h}")
    if models is None:
        models = list(dict.fromkeys(df["model"]))
    if targets is None:
        targets = list(dict.fromkeys(df["target"]))
    models, targets = list(models), list(targets)

    shape = dict(index=models, columns=targets, dtype=float)
    ratios = pd.DataFrame(np.nan, **shape)
    pvalues = pd.DataFrame(np.nan, **shape)
    cells = pd.DataFrame("", index=models, columns=targets, dtype=object)
    counts = pd.DataFrame(0, index=models, columns=targets, dtype=int)

    for tgt in targets:
        sub = df[df["target"] == tgt]
        b = sub[sub["model"] == benchmark]
        b = b[np.isfinite(b["forecast"].to_numpy(dtype=float))]
        if b.empty:
            raise DataError(f"benchmark {benchmark!r} has no usable records for target {tgt!r}")
        be = pd.Series(
            (b["forecast"].to_numpy(dtype=float) - b["realized"].to_numpy(dtype=float)) ** 2,
            index=pd.PeriodIndex(b["origin"]),
        )
        for mname in models:
            msub = sub[sub["model"] == mname]
            msub = msub[np.isfinite(msub["forecast"].to_numpy(dtype=float))]
            if msub.empty:
                continue
            me = pd.Series(
                (msub["forecast"].to_numpy(dtype=float) - msub["realized"].to_numpy(dtype=float)) ** 2,
                index=pd.PeriodIndex(msub["origin"]),
            )
            common = me.index.intersection(be.index)
            if len(common) == 0:
                continue
            e_m, e_b = me.loc[common], be.loc[common]
            mse_b = float(e_b.mean())
            if mse_b == 0.0:
                continue
            ratio = float(e_m.mean()) / mse_b
            try:
                _, p = dm_test((e_m - e_b).to_numpy(), h=h)
            except DataError:
                p = float("nan")
            ratios.loc[mname, tgt] = ratio
            pvalues.loc[mname, tgt] = p
            counts.loc[mname, tgt] = len(common)
            cells.loc[mname, tgt] = format_cell(ratio, p)

    return EvalTable(window, int(h), benchmark, ratios, pvalues, cells, counts)


def render_table(table: EvalTable) -> str:
    """Fixed-width text rendering of an accuracy table."""
    cols = list(table.cells.columns)
    rows = list(table.cells.index)
    name_w = max([len("model")] + [len(r) for r in rows])
    widths = [max(len(c), *(len(str(table.cells.loc[r, c])) for r in rows), 6) for c in cols]
    head = f"relative MSE vs {table.benchmark}  (h={table.h}, window={table.window})"
    lines = [head]
    lines.append("  ".join(["model".ljust(name_w)] + [c.rjust(w) for c, w in zip(cols, widths)]))
    for r in rows:
        cells = [str(table.cells.loc[r, c]).rjust(w) for c, w in zip(cols, widths)]
        lines.append("  ".join([r.ljust(name_w)] + cells))
    return "\n".join(lines) + "\n"
