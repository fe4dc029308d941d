use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("rejected input: {0}")]
    RejectedInput(String),

    #[error("invalid exponent β = {beta}: {reason}")]
    InvalidExponent { beta: f64, reason: &'static str },

    #[error("invalid viscosity μ = {0} (must be ≥ 0)")]
    InvalidViscosity(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("blow-up at t = {t} (step {step}): non-finite state")]
    BlowUp {
        t: f64,
        step: u64,
        last_finite: Box<crate::integrator::SimState>,
    },

    #[error("gate violated: {0}")]
    Gate(String),

    #[error("incomplete trajectory: {0}")]
    IncompleteTrajectory(String),

    #[error("malformed snapshot: {0}")]
    Snapshot(String),

    #[error("config error in {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
