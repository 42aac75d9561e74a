use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("history lookup at t = {t} lies before the start of the path ({start})")]
    HistoryOutOfRange { t: f64, start: f64 },

    #[error("time {t} outside the simulated horizon [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("invalid delay: {0}")]
    InvalidDelay(String),

    #[error("non-finite state for particle {particle} at step {step}")]
    NonFinite { particle: usize, step: usize },

    #[error("measures have unequal atom counts ({left} vs {right})")]
    UnequalAtoms { left: usize, right: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing model constant: {0}")]
    MissingConstant(&'static str),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
