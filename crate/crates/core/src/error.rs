use thiserror::Error;

/// Errors raised across the positioning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient measurements: {0}")]
    InsufficientMeasurements(String),

    #[error("singular geometry: {0}")]
    SingularGeometry(String),

    #[error("normal equations are rank deficient (condition number {condition:.3e})")]
    RankDeficient { condition: f64 },

    #[error(
        "gauss-newton did not converge after {iterations} iterations (last step {last_step:.3e})"
    )]
    NotConverged { iterations: usize, last_step: f64 },

    #[error("fisher information matrix is singular: {0}")]
    SingularFim(String),

    #[error("lifted direction is degenerate at epoch {epoch} (|u| = {norm:.3})")]
    DegenerateLift { epoch: usize, norm: f64 },

    #[error("conic program is infeasible: {0}")]
    Infeasible(String),

    #[error("conic solver hit the iteration limit ({0})")]
    MaxIterations(usize),

    #[error("malformed conic program: {0}")]
    MalformedProgram(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
