use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: dimension mismatch, expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("no vectors")]
    NoVectors,

    #[error("no data: {0}")]
    NoData(String),

    /// Tensor shapes that do not line up at an operation boundary.
    #[error("shape error: {0}")]
    Shape(String),

    /// An architecture or run configuration that cannot be built.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("refusing exhaustive search: {combinations} combinations exceed the limit of {limit}")]
    SearchTooLarge { combinations: u128, limit: u128 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by an unbuildable configuration rather than by bad input data.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Shape(_) | Error::Config(_) | Error::SearchTooLarge { .. }
        )
    }
}
