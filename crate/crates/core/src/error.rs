use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("feature {index} has zero variance under the design distribution")]
    ZeroVarianceFeature { index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("gram matrix is singular (smallest eigenvalue {beta2:e}, largest {largest:e})")]
    SingularGram { beta2: f64, largest: f64 },

    #[error("response {y} is outside the response space of {kind} loss")]
    ResponseDomain { kind: &'static str, y: f64 },

    #[error("operation requires {expected} loss, got {got}")]
    KindMismatch { expected: &'static str, got: &'static str },

    #[error("scenario truth is missing or inconsistent: {0}")]
    TruthMissing(String),

    #[error("margin constants are not available for {0} loss")]
    MarginUnsupported(&'static str),

    #[error("conjugate supremum attained at the tabulation edge u = {u_max}")]
    RangeExceeded { u_max: f64 },

    #[error("empirical design is not orthogonal (max deviation {deviation:e})")]
    NotOrthogonal { deviation: f64 },

    #[error("solver hit the iteration limit ({iterations}) without converging")]
    MaxIterExceeded { iterations: usize },

    #[error("target {target} is below the floor {floor}; no nonnegative root")]
    TargetBelowFloor { target: f64, floor: f64 },

    #[error("equation is not solvable: {0}")]
    NotSolvable(String),

    #[error("support enumeration needs {required} subproblems, cap is {cap}")]
    SearchBudgetExceeded { required: u128, cap: u128 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
