"""Command-line pipeline: ingest, factor diagnostics, backtests, reports.

Subcommands chain into the full workflow::

    macrocast synth   --out work/            # or bring your own data
    macrocast ingest  --manifest m.csv --data raw.csv --out work/
    macrocast factors --panel work/panel.csv --manifest m.csv --out work/
    macrocast run     --config run.json
    macrocast report  --records out/records.csv --out out/

Experiments are defined by a JSON or TOML config file; flags only override
single knobs. Every subcommand is deterministic: identical inputs produce
identical bytes. Exit codes: 0 success, 1 internal error, 2 bad input/data.
"""

from __future__ import annotations

import argparse
import json
import os
import re
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import pandas as pd

from .errors import DataError, FitError
from .evaluation import (
    WINDOWS,
    ExperimentPlan,
    TargetSpec,
    build_eval_table,
    read_records,
    records_frame,
    render_table,
    run_poos,
    write_records,
)
from .factors import extract_factors, factor_summary, marginal_r2, pc_p2, recursive_factor_count
from .panel import (
    balance_panel_em,
    load_manifest,
    load_panel,
    read_balanced,
    standardize,
    synth_dgp,
    transform_panel,
    write_balanced,
)
from .registry import model_registry, registry_names

LOG_TCODES = {4, 5, 6}

CONFIG_KEYS = {
    "data",
    "manifest",
    "output_dir",
    "targets",
    "horizons",
    "poos_start",
    "retune_every",
    "seed",
    "n_factors",
    "models",
    "exclude",
    "overrides",
    "threads",
    "balance_k",
}
TARGET_KEYS = {"id", "use_log", "end"}


def _say(msg: str) -> None:
    print(msg)


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name)


def _parse_models(arg: str) -> list[str]:
    """Split a comma-separated model list, greedy about names that
    themselves contain a comma (AR,BIC and friends)."""
    known = set(registry_names())
    tokens = [t.strip() for t in arg.split(",") if t.strip()]
    out: list[str] = []
    i = 0
    while i < len(tokens):
        if i + 1 < len(tokens) and f"{tokens[i]},{tokens[i + 1]}" in known:
            out.append(f"{tokens[i]},{tokens[i + 1]}")
            i += 2
        else:
            out.append(tokens[i])
            i += 1
    return out


# ------------------------------------------------------------ ingest


def cmd_ingest(args) -> int:
    manifest = load_manifest(args.manifest)
    panel = load_panel(args.data, manifest)
    transformed = transform_panel(panel)
    if args.dry_run:
        T, N = transformed.shape
        _say(f"dry run: {N} series x {T} months transform cleanly; nothing written")
        return 0
    balanced, report = balance_panel_em(
        transformed, k=args.k, tol=args.tol, max_iter=args.max_iter
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "panel.csv"
    report_path = write_balanced(balanced, report, path)
    T, N = balanced.shape
    _say(f"balanced panel: {N} series x {T} months -> {path}")
    _say(
        f"imputation: {report.imputed_count} cells, {report.iterations} iterations, "
        f"converged={report.converged} -> {report_path}"
    )
    return 0


# ------------------------------------------------------------ factors


def cmd_factors(args) -> int:
    manifest = load_manifest(args.manifest)
    panel = read_balanced(args.panel, manifest)
    scaled, _, _ = standardize(panel.frame)
    T, N = panel.shape
    kmax = max(1, min(args.kmax, min(T, N) // 2))
    # count on the panel in its native units (noise-dominated series then
    # contribute little variance); extraction itself needs standardized input
    k = args.k if args.k else pc_p2(panel.frame, kmax=kmax)
    fm = extract_factors(scaled, k)
    diag = marginal_r2(scaled, fm)
    groups = {m.id: m.group for m in manifest}
    summary, top = factor_summary(scaled, fm, groups=groups)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary.to_csv(out / "factor_summary.csv", index=False)
    top.to_csv(out / "factor_top_series.csv", index=False)
    long = diag.mr2.stack().rename("mr2").rename_axis(["series", "factor"]).reset_index()
    long.to_csv(out / "marginal_r2.csv", index=False)

    start = args.recursive_start or str(panel.dates[min(24, len(panel.dates) - 1)])
    counts = recursive_factor_count(panel, start, kmax=kmax)
    counts.to_csv(out / "factor_counts.csv", index=False)

    _say(f"selected k={k} factors, total R^2 {diag.total_r2:.3f} -> {out}")
    return 0


# ------------------------------------------------------------ synth


def cmd_synth(args) -> int:
    panel, _, _ = synth_dgp(args.T, args.N, args.r, snr=args.snr, seed=args.seed, start=args.start)
    out = Path(args.out)
    if not args.dry_run:
        out.mkdir(parents=True, exist_ok=True)
        data = panel.frame.copy()
        data.insert(0, "date", [str(p) for p in panel.dates])
        data.to_csv(out / "data.csv", index=False, float_format="%.17g")
        rows = [
            {"id": m.id, "group": m.group, "tcode": m.tcode, "start_date": str(m.start_date), "source": m.source}
            for m in panel.meta
        ]
        pd.DataFrame(rows).to_csv(out / "manifest.csv", index=False)
    T, N = panel.shape
    tail = "validated, nothing written" if args.dry_run else f"-> {out}"
    _say(f"synthetic panel: {N} series x {T} months, rank {args.r} {tail}")
    return 0


# ------------------------------------------------------------ run


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {p}")
    if p.suffix == ".toml":
        with open(p, "rb") as fh:
            return tomllib.load(fh)
    if p.suffix == ".json":
        with open(p, encoding="utf-8") as fh:
            return json.load(fh)
    raise DataError(f"config must be .json or .toml, got {p.suffix!r}")


def _check_keys(cfg: dict) -> None:
    unknown = sorted(set(cfg) - CONFIG_KEYS)
    if unknown:
        raise DataError(f"unknown config keys: {unknown}")
    for req in ("data", "manifest", "output_dir", "targets"):
        if req not in cfg:
            raise DataError(f"config is missing required key {req!r}")
    for key in ("data", "manifest"):
        if not Path(cfg[key]).exists():
            raise DataError(f"config {key} path does not exist: {cfg[key]}")


def _build_targets(cfg: dict, manifest) -> tuple[TargetSpec, ...]:
    tcode = {m.id: m.tcode for m in manifest}
    specs = []
    for entry in cfg["targets"]:
        if isinstance(entry, str):
            entry = {"id": entry}
        unknown = sorted(set(entry) - TARGET_KEYS)
        if unknown:
            raise DataError(f"unknown target keys: {unknown}")
        tid = entry["id"]
        if tid not in tcode:
            raise DataError(f"target {tid!r} not in the manifest")
        use_log = entry.get("use_log", tcode[tid] in LOG_TCODES)
        specs.append(TargetSpec(tid, use_log=bool(use_log), end=entry.get("end")))
    return tuple(specs)


def _select_models(include, exclude):
    catalog = model_registry()
    known = set(registry_names())
    include = list(include) if include else None
    exclude = set(exclude or ())
    for name in (include or []) + sorted(exclude):
        if name not in known:
            raise DataError(f"unknown model name {name!r}; catalog: {', '.join(sorted(known))}")
    if include is None and not exclude:
        return None  # full catalog
    chosen = [m for m in catalog if (include is None or m.name in include) and m.name not in exclude]
    if not chosen:
        raise DataError("model selection left nothing to run")
    return tuple(chosen)


def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg)
    if args.models:
        cfg["models"] = _parse_models(args.models)
    if args.retune_every is not None:
        cfg["retune_every"] = args.retune_every
    if args.threads is not None:
        cfg["threads"] = args.threads

    manifest = load_manifest(cfg["manifest"])
    raw = load_panel(cfg["data"], manifest)
    models = _select_models(cfg.get("models"), cfg.get("exclude"))
    plan = ExperimentPlan(
        targets=_build_targets(cfg, manifest),
        horizons=tuple(cfg.get("horizons", (1, 2, 3))),
        models=models,
        poos_start=cfg.get("poos_start", "2008-01"),
        retune_every=int(cfg.get("retune_every", 1)),
        seed=int(cfg.get("seed", 0)),
        n_factors=int(cfg.get("n_factors", 8)),
        overrides=dict(cfg.get("overrides", {})),
    )
    threads = int(cfg.get("threads") or os.cpu_count() or 1)

    n_models = len(models) if models is not None else len(model_registry())
    if args.dry_run:
        _say(
            f"dry run: {len(plan.targets)} target(s), horizons {list(plan.horizons)}, "
            f"{n_models} model(s), start {plan.poos_start}, threads {threads}; nothing written"
        )
        return 0

    transformed = transform_panel(raw)
    balanced, _ = balance_panel_em(transformed, k=int(cfg.get("balance_k", 8)))
    records = run_poos(plan, balanced, raw=raw.frame, threads=threads)

    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    write_records(records, out / "records.csv")
    failures = [
        {"target": r.target, "model": r.model, "h": r.h, "origin": str(r.origin), "error": r.error}
        for r in records
        if r.error
    ]
    (out / "failures.json").write_text(json.dumps(failures, indent=2) + "\n")
    _say(f"{len(records)} records ({len(failures)} failed fits) -> {out / 'records.csv'}")
    return 0


# ------------------------------------------------------------ report


def cmd_report(args) -> int:
    records = read_records(args.records)
    df = records_frame(records)
    horizons = (
        [int(s) for s in args.horizons.split(",")]
        if args.horizons
        else sorted(df["h"].unique())
    )
    windows = [s.strip() for s in args.windows.split(",")] if args.windows else ["full"]
    models = None
    if args.models:
        models = _parse_models(args.models)
        if args.benchmark not in models:
            models = [args.benchmark] + models

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for window in windows:
        for h in horizons:
            table = build_eval_table(records, h=h, window=window, benchmark=args.benchmark, models=models)
            stem = f"table_{_slug(window)}_h{h}"
            table.cells.rename_axis("model").to_csv(out / f"{stem}.csv")
            (out / f"{stem}.json").write_text(table.to_json() + "\n")
            _say(render_table(table))

    # plot-ready series: realized outcomes against every model's forecasts,
    # one file per (target, horizon), one column per model
    for (target, h), sub in df.groupby(["target", "h"], sort=True):
        if h not in horizons:
            continue
        wide = sub.pivot(index="origin", columns="model", values="forecast")
        wide = wide.reindex(columns=[m for m in dict.fromkeys(sub["model"])])
        realized = sub.drop_duplicates("origin").set_index("origin")["realized"]
        frame = pd.concat([realized, wide], axis=1).sort_index()
        frame.insert(0, "outcome_date", [str(o + h) for o in frame.index])
        frame.rename_axis("origin").to_csv(out / f"forecasts_{_slug(target)}_h{h}.csv", na_rep="")
    return 0


# ------------------------------------------------------------ parser


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="macrocast",
        description="Monthly macro panel pipeline: balance, factors, backtest, report.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("ingest", help="transform and balance a raw panel")
    g.add_argument("--manifest", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--out", default=".")
    g.add_argument("--k", type=int, default=8, help="imputation rank")
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--max-iter", type=int, default=500)
    g.add_argument("--dry-run", action="store_true")
    g.set_defaults(func=cmd_ingest)

    g = sub.add_parser("factors", help="factor count, loadings, and fit diagnostics")
    g.add_argument("--panel", required=True, help="balanced panel CSV")
    g.add_argument("--manifest", required=True)
    g.add_argument("--out", default=".")
    g.add_argument("--k", type=int, default=0, help="force a factor count (default: select)")
    g.add_argument("--kmax", type=int, default=15)
    g.add_argument("--recursive-start", default=None, help="YYYY-MM for recursive counts")
    g.set_defaults(func=cmd_factors)

    g = sub.add_parser("synth", help="write a synthetic factor panel and manifest")
    g.add_argument("--T", type=int, default=150)
    g.add_argument("--N", type=int, default=20)
    g.add_argument("--r", type=int, default=2)
    g.add_argument("--snr", type=float, default=10.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--start", default="1998-01")
    g.add_argument("--out", default=".")
    g.add_argument("--dry-run", action="store_true")
    g.set_defaults(func=cmd_synth)

    g = sub.add_parser("run", help="run the backtest described by a config file")
    g.add_argument("--config", required=True, help="JSON or TOML experiment definition")
    g.add_argument("--models", default=None, help="comma-separated include list")
    g.add_argument("--retune-every", type=int, default=None)
    g.add_argument("--threads", type=int, default=None)
    g.add_argument("--dry-run", action="store_true")
    g.set_defaults(func=cmd_run)

    g = sub.add_parser("report", help="accuracy tables and plot-ready series from records")
    g.add_argument("--records", required=True)
    g.add_argument("--out", default=".")
    g.add_argument("--windows", default="full", help=f"comma list from {sorted(WINDOWS)}")
    g.add_argument("--horizons", default=None, help="comma list, default: all present")
    g.add_argument("--benchmark", default="AR,BIC")
    g.add_argument("--models", default=None, help="comma-separated display filter")
    g.set_defaults(func=cmd_report)

    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DataError, FitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
