use thiserror::Error;

/// Errors raised across the reconstruction library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected length {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("clique {sub:?} is not contained in {sup:?}")]
    CliqueContainment { sub: Vec<usize>, sup: Vec<usize> },

    #[error("invalid clique {attrs:?}: {reason}")]
    InvalidClique { attrs: Vec<usize>, reason: String },

    #[error("invalid domain: {0}")]
    InvalidDomain(String),

    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    #[error("dense materialization refused: {entries} entries exceeds guard of {guard}")]
    DenseGuard { entries: usize, guard: usize },

    #[error("ingestion error at row {row}, column `{column}`: {reason}")]
    Ingestion {
        row: usize,
        column: String,
        reason: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("privacy budget exceeded by `{label}`: cost {cost:e} with {remaining:e} remaining")]
    BudgetExceeded {
        label: String,
        cost: f64,
        remaining: f64,
    },

    #[error("infeasible budget: requested {requested:e} zCDP exceeds {available:e}")]
    InfeasibleBudget {
        requested: f64,
        available: f64,
        breakdown: Vec<(String, f64)>,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
