use thiserror::Error;

/// Errors produced by the distribution, estimation and averaging routines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum GevError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("too few observations: need at least {needed}, got {got}")]
    TooFewObservations { needed: usize, got: usize },

    #[error("degenerate sample: all observations are equal")]
    DegenerateSample,

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("singular information matrix at xi = {xi}")]
    SingularInformation { xi: f64 },

    #[error("optimizer did not converge: {0}")]
    NonConvergence(String),

    #[error("constraint infeasible: {0}")]
    ConstraintInfeasible(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("fit failed for candidate xi = {xi}: {source}")]
    CandidateFit {
        xi: f64,
        #[source]
        source: Box<GevError>,
    },

    #[error("forward cross-validation test set is empty (n = {n}, fraction = {fraction})")]
    EmptyTestSet { n: usize, fraction: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, GevError>;

impl From<std::io::Error> for GevError {
    fn from(e: std::io::Error) -> Self {
        GevError::Io(e.to_string())
    }
}
