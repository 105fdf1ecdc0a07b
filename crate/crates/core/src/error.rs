use thiserror::Error;

/// Errors produced by the unmixing toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A value outside the domain of an operation (e.g. a negative entry
    /// passed to a fractional power).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// More endmembers were requested than the data can support.
    #[error("requested {requested} endmembers but the data has rank {rank}")]
    Rank { requested: usize, rank: usize },

    /// A factor picked up a NaN or infinite entry.
    #[error("solver diverged at iteration {iteration}{}", layer.map(|l| format!(" of layer {l}")).unwrap_or_default())]
    Divergence {
        iteration: usize,
        layer: Option<usize>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
