use thiserror::Error;

/// Every failure the toolkit can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("transport solver failed: {0}")]
    Solver(String),
    #[error("invalid control: {0}")]
    InvalidControl(String),
    #[error("non-finite state at t = {time}")]
    NonFinite { time: f64 },
    #[error("invalid dictionary: {0}")]
    InvalidDictionary(String),
    #[error("point not in dictionary: t = {t}")]
    NotInDictionary { t: f64 },
    #[error("search budget exceeded: {required} candidate sequences, budget {budget}")]
    Budget { required: f64, budget: f64 },
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("no admissible parameter complex: {0}")]
    SearchExhausted(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
