use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum BdfError {
    #[error("probability exactly at boundary ({0}); upstream linear predictor saturated")]
    ProbabilityBoundary(f64),

    #[error("missing parent value `{parent}` for role {role}")]
    MissingParent { role: &'static str, parent: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("{role} model: design matrix is rank deficient (singular information matrix)")]
    SingularInformation { role: &'static str },

    #[error("{role} model: complete or quasi-complete separation detected (|coefficient| > {limit})")]
    Separation { role: &'static str, limit: f64 },

    #[error("{role} model did not converge in {iterations} iterations")]
    NoConvergence { role: &'static str, iterations: usize },

    #[error("variance inflation broke positive definiteness of the {block} prior block")]
    InflationNotPositiveDefinite { block: &'static str },

    #[error("prior covariance for block {block} is not positive definite")]
    NotPositiveDefinite { block: &'static str },

    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),

    #[error("Dirichlet concentration parameters must be strictly positive")]
    NonPositiveAlpha,

    #[error("estimand {estimand} is not identified under this model structure: {requirement}")]
    NotIdentified {
        estimand: &'static str,
        requirement: &'static str,
    },

    #[error("unsupported regime kind for this estimator: {0}")]
    UnsupportedRegime(&'static str),

    #[error("empty cells in external data: {0}")]
    CellSparsity(String),

    #[error("sampler failed: {0}")]
    Sampler(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BdfError>;
