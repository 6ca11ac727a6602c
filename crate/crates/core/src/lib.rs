//! Combining probabilistic forecasts given as piecewise-linear CDFs:
//! vertical, horizontal and angular pooling, scoring, parameter estimation
//! and rolling-origin backtests.

pub mod backtest;
pub mod cdf;
pub mod combine;
pub mod error;
pub mod estimation;
pub mod ingest;
pub mod scoring;
pub mod verify;

pub use cdf::{
    cdf_from_quantiles, cot_deg, intersect_line, link_transform, sup_distance, AngledLine,
    BoundRule, FlatRule, LinkDirection, Moments, PiecewiseLinearCdf, ProbabilityLevel,
    QuantileForecast, ScaledFrame, HUB_LEVELS,
};
pub use combine::{
    angular_combine_exact, angular_combine_grid, beta_pool, horizontal_combine, hv_switch,
    median_combine, recalibrate, secondary_combine, trim_by_mean, trim_indices, vertical_combine,
    Aggregator, BetaPoolParams, CombinationSpec, Direction, RecalibrationParams, TrimKind,
    Weights, DEFAULT_GRID_POINTS,
};
pub use error::{Error, Result};
pub use ingest::{gaussian_forecast, ForecastDataset};
pub use scoring::{crps, interval_score, mqs, quantile_score, skill_score, ScoreReport, ScoreSet};
