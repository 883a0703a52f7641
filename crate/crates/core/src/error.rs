use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = OdbError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OdbError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is singular (pivot ratio below threshold)")]
    Singular,

    #[error("covariate column `{0}` is constant; it cannot be mapped onto [-1, 1]")]
    ConstantColumn(String),

    #[error("efficiency {value} exceeds 1 beyond tolerance: the reference design is not optimal over a space containing these points")]
    EfficiencyAboveOne { value: f64 },

    #[error("candidate set does not span the parameter space")]
    NonSpanning,

    #[error("sample size {n} is smaller than the number of support points {k}")]
    TooFewForSupport { n: usize, k: usize },

    #[error("requested {n} rows from a dataset with {available}")]
    SampleTooLarge { n: usize, available: usize },

    #[error("no nonsingular starting sample found after {attempts} draws")]
    NoNonsingularStart { attempts: usize },

    #[error("compute budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("logistic fit did not converge: {0}")]
    NonConvergence(String),

    #[error("complete or quasi-complete separation: {0}")]
    Separation(String),

    #[error("{}: line {line}: {message}", path.display())]
    Csv {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("config errors:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
