use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the forecasting toolbox.
#[derive(Debug, Error)]
pub enum EpfError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("cadence error: {0}")]
    Cadence(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("calendar error: day has {0} hourly values, expected 23, 24 or 25")]
    Calendar(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("transport error fetching {url}: {status}")]
    Transport { url: String, status: String },

    #[error("checksum mismatch for {path}: expected {expected}, got {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("split error: {0}")]
    Split(String),

    #[error("slice error: {0}")]
    Slice(String),

    #[error("feature error: {0}")]
    Feature(String),

    #[error("lookahead: price of day index {day} requested while forecasting day index {target}")]
    Lookahead { day: usize, target: usize },

    #[error("transform error: {0}")]
    Transform(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("combine error: {0}")]
    Combine(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("degenerate loss differential: {0}")]
    Degenerate(String),

    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl EpfError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EpfError::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors caused by malformed or insufficient input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            EpfError::Parse { .. }
                | EpfError::Cadence(_)
                | EpfError::Schema(_)
                | EpfError::Calendar(_)
                | EpfError::Checksum { .. }
                | EpfError::Split(_)
                | EpfError::Slice(_)
                | EpfError::Feature(_)
                | EpfError::Lookahead { .. }
                | EpfError::Shape(_)
                | EpfError::Combine(_)
                | EpfError::Metric(_)
                | EpfError::Transport { .. }
                | EpfError::Io { .. }
                | EpfError::Serde(_)
        )
    }

    /// Errors raised by solvers, training, or statistics.
    pub fn is_numeric_error(&self) -> bool {
        matches!(
            self,
            EpfError::Numeric(_)
                | EpfError::Divergence { .. }
                | EpfError::Degenerate(_)
                | EpfError::Conditioning(_)
                | EpfError::Transform(_)
        )
    }
}

pub type Result<T, E = EpfError> = std::result::Result<T, E>;
