use thiserror::Error;

/// Errors raised anywhere in the homogenization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid mismatch: expected {expected} values, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e}): {context}")]
    NotConverged {
        iterations: usize,
        residual: f64,
        context: String,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("bisection failed to bracket a root: {0}")]
    Bracket(String),

    #[error("point {point:?} lies outside the tabulated box [-{half_width}, {half_width}]")]
    OutOfTable { point: Vec<f64>, half_width: f64 },

    #[error("resolution guard: {0}")]
    Resolution(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("assertion failed: {0}")]
    Assertion(String),

    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("epsilon {epsilon}: {source}")]
    Run {
        epsilon: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("xi = {xi:?}: {source}")]
    Sample {
        xi: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Innermost error, skipping provenance wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } | Error::Run { source, .. } | Error::Sample { source, .. } => {
                source.root()
            }
            other => other,
        }
    }

    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Assertion(_) => 2,
            Error::Config(_) | Error::Resolution(_) => 4,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 4,
            _ => 3,
        }
    }
}
