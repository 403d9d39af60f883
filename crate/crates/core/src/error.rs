use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid probability {0}: must lie in [0, 1]")]
    InvalidProbability(f64),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("shape mismatch: expected dimension {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("insufficient history: need at least {needed} observations, have {have}")]
    InsufficientHistory { needed: usize, have: usize },
    #[error("insufficient data: need {needed} records, have {have}")]
    InsufficientData { needed: usize, have: usize },
    #[error("alignment error: {losses} online losses for {samples} samples")]
    Alignment { losses: usize, samples: usize },
    #[error("invalid phase: {0}")]
    InvalidPhase(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("end of stream at frame {0}")]
    EndOfStream(u64),
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
