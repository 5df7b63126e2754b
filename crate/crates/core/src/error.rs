//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("truncation region has (numerically) zero probability mass")]
    DegenerateTruncation,

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("rank-deficient design for outcome {outcome}")]
    RankDeficient { outcome: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("record {record}: {source}")]
    Record {
        record: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(
        "log-likelihood decreased by {drop:.6e} at iteration {iteration} (slack {slack:.1e}); \
         trace tail: {trace_tail:?}"
    )]
    MonotonicityViolation {
        iteration: usize,
        drop: f64,
        slack: f64,
        trace_tail: Vec<f64>,
    },

    #[error("bootstrap unstable: {failures} of {requested} replications failed to refit")]
    BootstrapUnstable { failures: usize, requested: usize },

    #[error("missing-rate target {target} unreachable by intercept shift")]
    UnreachableMissingRate { target: f64 },

    #[error("Monte Carlo cell (n={n}, rate={rate}) failed: {failures} of {reps} fits failed")]
    CellFailure {
        n: usize,
        rate: f64,
        failures: usize,
        reps: usize,
    },

    #[error("rejection oracle infeasible: acceptance rate {rate:.3e} below 1e-4")]
    OracleInfeasible { rate: f64 },
}

impl Error {
    pub fn at_record(self, record: usize) -> Error {
        Error::Record {
            record,
            source: Box::new(self),
        }
    }

    pub fn at_iteration(self, iteration: usize) -> Error {
        Error::Iteration {
            iteration,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
