use thiserror::Error;

/// Crate-wide error type.
#[derive(Error, Debug)]
pub enum Error {
    /// Grid cells do not match the declared dimensions.
    #[error("dimension mismatch: expected {expected} cells, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A queried point lies outside the map.
    #[error("point ({x:.3}, {y:.3}) outside map bounds")]
    OutOfBounds { x: f64, y: f64 },

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    Domain(String),

    /// A numeric procedure has no well-defined answer on this input.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Scene generation exhausted its rejection-sampling budget.
    #[error("scene generation failed: {0}")]
    Generation(String),

    /// Malformed file contents.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
