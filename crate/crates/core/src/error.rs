use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImputeError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for extent {extent}")]
    Bounds { index: usize, extent: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("ill-conditioned: {0}")]
    Conditioning(String),

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ImputeError {
    /// Numerical failures map to exit code 2, everything else to 1.
    pub fn is_numerical(&self) -> bool {
        matches!(self, ImputeError::Conditioning(_) | ImputeError::Divergence(_))
    }
}

pub type Result<T> = std::result::Result<T, ImputeError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ImputeError::Shape(msg.into()))
}

pub(crate) fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ImputeError::Input(msg.into()))
}
