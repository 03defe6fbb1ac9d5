use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A required column is missing or the schema is inconsistent.
    #[error("schema error: {0}")]
    Schema(String),

    /// A cell failed to parse; carries the 1-based data row.
    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// Input violates a mathematical precondition (non-positive
    /// concentration, degenerate column, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A run-time configuration is unusable (flagged cell without an LOD,
    /// unknown scenario name, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Shape or noise calibration cannot produce a valid scale.
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Model fitting failed (non-positive-definite dependence matrix, ...).
    #[error("fit error: {0}")]
    Fit(String),

    /// Numerical failure inside a sampler or solver.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
