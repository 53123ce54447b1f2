"""Monthly macro panel forecasting engine and backtesting harness.

The package is organized as flat modules (``panel``, ``factors``,
``features``, ``linear``, ``kernel``, ``trees``, ``mrf``, ``neural``,
``registry``, ``evaluation``, ``cli``); everything a typical caller needs to
run a backtest end to end is re-exported here.
"""

from macrocast.errors import DataError, FitError
from macrocast.evaluation import (
    ExperimentPlan,
    ForecastRecord,
    TargetSpec,
    build_eval_table,
    dm_test,
    read_records,
    records_frame,
    render_table,
    run_poos,
    write_records,
)
from macrocast.factors import extract_factors, marginal_r2, pc_p2
from macrocast.panel import (
    balance_panel_em,
    load_manifest,
    load_panel,
    standardize,
    synth_dgp,
    transform_panel,
)
from macrocast.registry import ModelSpec, model_registry, registry_names

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "FitError",
    "ExperimentPlan",
    "ForecastRecord",
    "TargetSpec",
    "build_eval_table",
    "dm_test",
    "read_records",
    "records_frame",
    "render_table",
    "run_poos",
    "write_records",
    "extract_factors",
    "marginal_r2",
    "pc_p2",
    "balance_panel_em",
    "load_manifest",
    "load_panel",
    "standardize",
    "synth_dgp",
    "transform_panel",
    "ModelSpec",
    "model_registry",
    "registry_names",
    "__version__",
]
