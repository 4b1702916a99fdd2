"""Hierarchical conformal prediction intervals for circuit/substation
event-count forecasts, on top of a discrete-time Hawkes count model."""

from ._kernels import USING_NUMBA
from .conformal import (
    AuditRecord,
    IntervalForecast,
    PipelineSettings,
    QuantileEstimate,
    ScoreSet,
    build_interval,
    calibrate,
    empirical_quantile,
    hst_conformal_pipeline,
    nonconformity_score,
    qr_quantile,
    score_bin,
    training_scale,
)
from .data import (
    CountPanel,
    SplitSpec,
    generate_synthetic,
    ingest_covariates,
    ingest_events,
    make_bin_grid,
    split,
    write_events,
)
from .errors import DataValidationError, HstcError, NumericalError, PreconditionError
from .evaluation import (
    EvalReport,
    HorizonForecast,
    coverage_counts,
    half_nodes_trial,
    horizon_forecast,
    rolling_evaluate,
    write_cells_csv,
    write_forecast_csv,
    write_metrics,
)
from .hawkes import (
    FitConfig,
    FitMeta,
    HawkesModel,
    SaturationParams,
    ScenarioSet,
    fit,
    intensity,
    log_likelihood,
    log_likelihood_gradient,
    simulate_bin,
    simulate_trajectory,
)
from .topology import NetworkTopology, aggregate, shared_membership, subsample_circuits

__version__ = "0.1.0"

__all__ = [
    "AuditRecord",
    "CountPanel",
    "DataValidationError",
    "EvalReport",
    "FitConfig",
    "FitMeta",
    "HawkesModel",
    "HorizonForecast",
    "HstcError",
    "IntervalForecast",
    "NetworkTopology",
    "NumericalError",
    "PipelineSettings",
    "PreconditionError",
    "QuantileEstimate",
    "SaturationParams",
    "ScenarioSet",
    "ScoreSet",
    "SplitSpec",
    "USING_NUMBA",
    "aggregate",
    "build_interval",
    "calibrate",
    "coverage_counts",
    "empirical_quantile",
    "fit",
    "generate_synthetic",
    "half_nodes_trial",
    "horizon_forecast",
    "hst_conformal_pipeline",
    "ingest_covariates",
    "ingest_events",
    "intensity",
    "log_likelihood",
    "log_likelihood_gradient",
    "make_bin_grid",
    "nonconformity_score",
    "qr_quantile",
    "rolling_evaluate",
    "score_bin",
    "shared_membership",
    "simulate_bin",
    "simulate_trajectory",
    "split",
    "subsample_circuits",
    "training_scale",
    "write_cells_csv",
    "write_events",
    "write_forecast_csv",
    "write_metrics",
]
