use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("degenerate parameters: {0}")]
    DegenerateParameters(String),

    #[error("integration failed at step {step} (t = {time}): non-finite state")]
    IntegrationFailure { step: usize, time: f64 },

    #[error("integration failed for omega = {omega}: {source}")]
    DirectionFailure {
        omega: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("horizon too short: {reason} (extend horizon to at least {required} days)")]
    HorizonTooShort { reason: String, required: usize },

    #[error("no epidemic: infected proportion never rises above its initial value")]
    NoEpidemic,

    #[error("perturbation too large: epsilon = {epsilon} must be below delta = {delta}")]
    PerturbationTooLarge { epsilon: f64, delta: f64 },

    #[error("degenerate variance at day {day}: sigma_t = {sigma}")]
    DegenerateVariance { day: usize, sigma: f64 },

    #[error("hypotheses are indistinguishable on the observation grid (V_T = 0)")]
    IndistinguishableHypotheses,

    #[error("no detectable perturbation: target type II error {target} must be below 1 - alpha = {limit}")]
    NoDetectablePerturbation { target: f64, limit: f64 },

    #[error("least-squares fit degenerate for omega = {omega}: only {points} usable points")]
    FitDegenerate { omega: f64, points: usize },

    #[error("optimization failed for every start: {}", .diagnostics.join("; "))]
    OptimizationFailure { diagnostics: Vec<String> },

    #[error("{failed} of {total} replicates failed (more than 5%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error("fit did not converge; refusing to build a band from it")]
    NotConverged,

    #[error("{path}: malformed CSV at line {line}: {reason}")]
    MalformedCsv {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("{path}: negative count {count} on {date}")]
    NegativeCount {
        path: PathBuf,
        date: chrono::NaiveDate,
        count: i64,
    },

    #[error("{path}: duplicate row for {date}")]
    DuplicateDate {
        path: PathBuf,
        date: chrono::NaiveDate,
    },

    #[error("{path}: missing row for {date}")]
    MissingDate {
        path: PathBuf,
        date: chrono::NaiveDate,
    },

    #[error("empty series: no rows in the requested date range")]
    EmptySeries,

    #[error("invalid config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable machine-readable name, used in the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "invalid-parameter",
            Error::DegenerateParameters(_) => "degenerate-parameters",
            Error::IntegrationFailure { .. } => "integration-failure",
            Error::DirectionFailure { .. } => "integration-failure",
            Error::InsufficientData(_) => "insufficient-data",
            Error::HorizonTooShort { .. } => "horizon-too-short",
            Error::NoEpidemic => "no-epidemic",
            Error::PerturbationTooLarge { .. } => "perturbation-too-large",
            Error::DegenerateVariance { .. } => "degenerate-variance",
            Error::IndistinguishableHypotheses => "indistinguishable-hypotheses",
            Error::NoDetectablePerturbation { .. } => "no-detectable-perturbation",
            Error::FitDegenerate { .. } => "fit-degenerate",
            Error::OptimizationFailure { .. } => "optimization-failure",
            Error::TooManyFailures { .. } => "too-many-failures",
            Error::NotConverged => "not-converged",
            Error::MalformedCsv { .. } => "malformed-csv",
            Error::NegativeCount { .. } => "negative-count",
            Error::DuplicateDate { .. } => "duplicate-date",
            Error::MissingDate { .. } => "missing-date",
            Error::EmptySeries => "empty-series",
            Error::Config(_) => "config-validation",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
