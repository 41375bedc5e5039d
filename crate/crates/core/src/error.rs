use thiserror::Error;

/// Errors produced across the simulator and estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    /// Channel-layer weights collapsed so a projection or coordinate solve is undefined.
    #[error("degenerate channel-layer weights at subcarrier {subcarrier}")]
    DegenerateWeights { subcarrier: usize },

    #[error("training failed after {restarts} restarts")]
    TrainingFailed { restarts: usize },

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed parameter file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
