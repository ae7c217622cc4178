use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: file contains no sentences")]
    EmptyFile { path: PathBuf },

    #[error("{path}:{line}: {reason}")]
    Format {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid token {0:?}")]
    InvalidToken(String),

    #[error("vocabulary conflict: {0}")]
    VocabConflict(String),

    #[error("out-of-domain corpus too small: need {needed} pairs, have {available}")]
    OutDomainTooSmall { needed: usize, available: usize },

    #[error("marker {marker:?} collides with existing source token {token:?}")]
    MarkerCollision { marker: String, token: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("token budget {budget} exceeds corpus size of {available} source tokens")]
    BudgetExceedsCorpus { budget: usize, available: usize },

    #[error("corpus size mismatch: {hypotheses} hypotheses vs {references} references")]
    SizeMismatch { hypotheses: usize, references: usize },

    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: usize, size: usize },

    #[error("training diverged at update {update}: loss = {loss}")]
    Diverged { update: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            op,
            expected: expected.into(),
            actual: actual.into(),
        }
    }
}
