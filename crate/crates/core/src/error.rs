use thiserror::Error;

/// Errors produced anywhere in the library.
///
/// Each variant maps to one of the stable CLI exit codes via [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("batch-statistics error: {0}")]
    BatchStats(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("batch composition error: {0}")]
    BatchComposition(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("sampling error: {0}")]
    Sampling(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for this error: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Numeric(_) | Error::DegenerateEmbedding(_) => 4,
            _ => 3,
        }
    }
}
