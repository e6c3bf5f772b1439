use crate::discretization::FieldState;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state is not an equilibrium (reaction residual {residual:e})")]
    NotEquilibrium { residual: f64 },

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("matrix is singular at pivot {0}")]
    Singular(usize),

    #[error("singular point: {0}")]
    SingularPoint(String),

    #[error("corrector failed after {iterations} iterations (residual {residual:e})")]
    CorrectorFailure { iterations: usize, residual: f64 },

    #[error("Newton iteration failed to converge (residual {residual:e})")]
    NewtonFailure { residual: f64 },

    #[error("branch switching failed: {0}")]
    SwitchFailure(String),

    #[error("no steady state reached by t = {t:e} (residual {residual:e})")]
    Timeout {
        t: f64,
        residual: f64,
        last: Box<FieldState>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
