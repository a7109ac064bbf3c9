use thiserror::Error;

/// Error type shared across the toolkit.
#[derive(Debug, Error)]
pub enum OscaError {
    /// A value outside its domain (e.g. a frame label built on `no_osc`).
    #[error("domain error: {0}")]
    Domain(String),

    /// Structurally invalid input data; the message names the offending
    /// record and field where possible.
    #[error("validation error: {0}")]
    Validation(String),

    /// Several validation failures collected from one config or file.
    #[error("invalid configuration:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    /// Tensor/vector width mismatch between data and model parameters.
    #[error("shape error: {0}")]
    Shape(String),

    /// Training aborted (non-finite loss, empty training set, ...).
    #[error("training error: {0}")]
    Train(String),

    /// Malformed corpus, checkpoint or report file.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl OscaError {
    /// Short category tag used when reporting errors on stderr.
    pub fn category(&self) -> &'static str {
        match self {
            OscaError::Domain(_) => "domain",
            OscaError::Validation(_) => "validation",
            OscaError::Config(_) => "config",
            OscaError::Shape(_) => "shape",
            OscaError::Train(_) => "train",
            OscaError::Format(_) => "format",
            OscaError::Io(_) => "io",
            OscaError::Json(_) => "json",
        }
    }

    /// Process exit code for the CLI: 2 for configuration mistakes the
    /// caller can fix on the command line, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            OscaError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, OscaError>;
