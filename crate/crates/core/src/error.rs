use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("integration failed: non-finite integrand at t = {node}")]
    Integration { node: f64 },
    #[error("bracketing failure: {0}")]
    Bracketing(String),
    #[error("solver did not converge: {0}")]
    NonConvergence(String),
    #[error("{message}; final residuals {residuals:?} after {} iterates", path.len())]
    Solver {
        message: String,
        residuals: Vec<f64>,
        path: Vec<Vec<f64>>,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("training data are not linearly separable through the origin: {0}")]
    Infeasible(String),
    #[error("empty batch: {0}")]
    EmptyBatch(String),
    #[error("trial {trial} (seed {seed}) failed: {source}")]
    Trial {
        trial: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("malformed input: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
