use thiserror::Error;

use dfl_core::DflError;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(String),

    #[error("unexpected {got} frame while waiting for {want}")]
    Unexpected { got: String, want: &'static str },

    #[error("third party reported: {0}")]
    Remote(String),

    #[error("request timed out")]
    Timeout,

    #[error("no fair hypotheses returned (m = {m})")]
    NoFairHypotheses { m: usize },

    #[error("connection closed")]
    Closed,

    #[error(transparent)]
    Core(#[from] DflError),

    #[error(transparent)]
    Io(std::io::Error),
}

impl From<std::io::Error> for ProtocolError {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut => ProtocolError::Timeout,
            std::io::ErrorKind::UnexpectedEof => ProtocolError::Closed,
            _ => ProtocolError::Io(e),
        }
    }
}

pub type Result<T> = std::result::Result<T, ProtocolError>;
