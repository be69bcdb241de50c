use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("index {index} out of range for {len} cells")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonFinite(_) => "non_finite",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::LengthMismatch(_) => "length_mismatch",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::Empty(_) => "empty",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::InvalidDistribution(_) => "invalid_distribution",
            Error::Singular(_) => "singular",
            Error::Diverged { .. } => "diverged",
            Error::Parse(_) => "parse",
            Error::File { .. } => "file",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
