use thiserror::Error;

use crate::projector::ProjectionResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value while evaluating {what}")]
    NonFinite { what: &'static str },

    #[error("unknown manifold `{name}`; available: {}", available.join(", "))]
    UnknownManifold { name: String, available: Vec<String> },

    #[error("expression error at offset {offset}: {message}")]
    Expression { offset: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("constraint Jacobian is rank deficient (rank < {expected})")]
    SingularConstraint { expected: usize },

    #[error("degenerate point: {0}")]
    DegeneratePoint(String),

    #[error("singular KKT system at iteration {iteration}")]
    SingularKkt { iteration: usize },

    #[error(
        "projection did not converge (feasibility {:.3e}, stationarity {:.3e})",
        best.feas_residual,
        best.stat_residual
    )]
    NonConvergence { best: Box<ProjectionResult> },

    #[error("theorem not applicable: {0}")]
    Applicability(String),

    #[error("solver quality: {0}")]
    SolverQuality(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
