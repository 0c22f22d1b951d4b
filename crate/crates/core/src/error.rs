use thiserror::Error;

use crate::backend::SolveStatus;
use crate::problem::Diagnostic;

pub type Result<T, E = CsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CsError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: String, expected: String, actual: String },

    #[error("nominal trajectory inconsistent with the discretized model at step {step}: defect {defect:.3e} exceeds {tolerance:.3e}")]
    NominalInconsistency { step: usize, defect: f64, tolerance: f64 },

    #[error("A_{step} is not invertible (condition number {condition:.3e})")]
    SingularDynamics { step: usize, condition: f64 },

    #[error("attitude too close to the Euler-angle singularity (pitch {pitch:.6} rad)")]
    KinematicSingularity { pitch: f64 },

    #[error("invalid linearization reference: {0}")]
    InvalidReference(String),

    #[error("problem failed validation:\n{}", format_diagnostics(.0))]
    Validation(Vec<Diagnostic>),

    #[error("mean steering infeasible: {0}")]
    InfeasibleMean(String),

    #[error("refusing to extract a solution with status {0:?}")]
    ExtractionRefused(SolveStatus),

    #[error("covariance at step {step} is singular")]
    SingularCovariance { step: usize },

    #[error("not supported by the lifted baseline: {0}")]
    UnsupportedInBaseline(String),

    #[error("malformed conic program: {0}")]
    MalformedProgram(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CsError {
    pub(crate) fn dims(context: &str, expected: impl ToString, actual: impl ToString) -> Self {
        CsError::DimensionMismatch {
            context: context.to_string(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags.iter().map(|d| format!("  - {d}")).collect::<Vec<_>>().join("\n")
}
