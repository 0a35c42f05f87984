use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
    #[error("integration failed at substep {substep}: {reason}")]
    Integration { substep: usize, reason: String },
    #[error("simulation blew up at step {step}: {reason}")]
    Simulation { step: usize, reason: String },
    #[error("training aborted at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
