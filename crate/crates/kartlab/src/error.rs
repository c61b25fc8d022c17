//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// Mismatched array/batch dimensions.
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A computation produced NaN or infinity. Carries a short description
    /// of the offending quantity so divergence can be traced.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A sample window with fewer than two samples cannot seed a rollout.
    #[error("sample window too short: {0} samples (need >= 2)")]
    WindowTooShort(usize),

    /// Every MPPI rollout diverged; the model has blown up.
    #[error("all {0} sampled rollouts diverged; model is unusable")]
    AllRolloutsDiverged(usize),

    /// A required input file is missing. `hint` names the command that
    /// produces it.
    #[error("missing input file {path}: {hint}")]
    MissingInput { path: String, hint: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed record at line {line}: {msg}")]
    Csv { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
