use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("site {site} outside window [{lo}, {hi}]")]
    OutOfRange { site: i64, lo: i64, hi: i64 },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("operation not supported for model {0}")]
    UnsupportedModel(String),
    #[error("window mismatch: {0}")]
    WindowMismatch(String),
    #[error("state space too large: {states} states exceeds cap {cap}")]
    CapExceeded { states: u128, cap: u64 },
    #[error("restriction not closed: transition {from} -> {to} leaves the state space")]
    NotClosed { from: String, to: String },
    #[error("generator is reducible: {count} communicating classes, e.g. {examples:?}")]
    Reducible { count: usize, examples: Vec<Vec<String>> },
    #[error("measure is not reversible for the generator (max flux imbalance {0:e})")]
    NotReversible(f64),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("optimization failed: {0}")]
    Optimization(String),
    #[error("configuration error at line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
