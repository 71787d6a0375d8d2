use std::path::PathBuf;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty panel")]
    EmptyPanel,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("rank-deficient design matrix in interval {interval} ({equation} equation)")]
    RankDeficient { interval: usize, equation: &'static str },

    #[error("propensity {propensity} at step {step} leaves an arm unobservable")]
    DegeneratePropensity { step: usize, propensity: f64 },

    #[error("process cannot be enumerated: {0}")]
    NotEnumerable(String),

    #[error("day already terminated after {0} steps")]
    DayTerminated(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("malformed data: {0}")]
    Data(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown identifier `{0}`")]
    Unknown(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
