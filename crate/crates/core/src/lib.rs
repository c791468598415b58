//! Training re-evaluation curves (TRECs).
//!
//! A TREC is the loss of the *final* model on each training batch, indexed by
//! the training fraction `t / T` at which that batch was seen. This crate
//! predicts TREC shape before training from AdamW's implicit EMA over updates,
//! fits the training-fraction exponent that models minimizer drift, validates
//! both on a quadratic training simulator, and turns curves into data-placement
//! recommendations.
//!
//! Modules, bottom up:
//! - [`schedule`]: learning-rate schedules evaluated at step ends.
//! - [`ema`]: AdamW timescale and per-step EMA contribution coefficients.
//! - [`trec`]: loss logs, smoothing, normalization, shape metrics.
//! - [`predictor`]: the `1 - c^p t^m` shape model, `m` fitting, power laws.
//! - [`quadsim`]: SGD / AdamW on noisy drifting quadratics.
//! - [`placement`]: window search, curricula and recipe audits.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ema;
pub mod io;
pub mod placement;
pub mod predictor;
pub mod quadsim;
pub mod schedule;
pub mod trec;

pub use ema::{
    continuous_coefficients, ema_coefficients, small_lambda_profile, timescale, CoefficientCurve,
    EmaCoefficients, EmaError, EmaSummary, Timescale, TimescaleParams,
};
pub use placement::{
    audit_recipe, emit_curriculum, parse_recipe, recommend, segment_means, AuditOptions, AuditReport,
    BlendLabel, PlacementError, PlacementPlan, Recipe,
};
pub use predictor::{
    effective_tpp, fit_m, fit_power_law, full_prediction, predict_m, predict_trec, FitFilters, FitRecord,
    MFit, PowerLawFit, PredictError, PredictionParams,
};
pub use quadsim::{
    placement_experiment, run_adamw, run_sgd, simulated_trec, Optimizer, SimConfig, SimError, SimRun,
};
pub use schedule::{lr_array, lr_at, parse_schedule, ScheduleError, ScheduleKind, ScheduleSpec};
pub use trec::{
    build_trec, log_r2, normalize, pearson, resample, smooth, LossEntry, LossLog, Trec, TrecError, TrecKind,
};

use thiserror::Error;

/// Crate-wide error, wrapping each module's error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Ema(#[from] EmaError),
    #[error(transparent)]
    Trec(#[from] TrecError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Recipe(#[from] placement::RecipeParseError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Whether the failure came from reading a malformed input (as opposed to
    /// a numeric or validation failure on well-formed input).
    pub fn is_parse(&self) -> bool {
        matches!(
            self,
            Error::Schedule(ScheduleError::Parse { .. })
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Trec(TrecError::Format(_))
                | Error::Recipe(_)
                | Error::Sim(SimError::Schedule(ScheduleError::Parse { .. }) | SimError::Parse { .. })
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
