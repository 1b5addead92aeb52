use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("parameter `{name}` = {value} is invalid: {reason}")]
    Parameter {
        name: String,
        value: f64,
        reason: String,
    },

    #[error(
        "truncation N = {n_side_pulses} does not cover the grid: max |tau| = {max_tau} > (N - 0.5) * Lambda = {coverage}"
    )]
    TruncationCoverage {
        n_side_pulses: usize,
        max_tau: f64,
        coverage: f64,
    },

    #[error("parameter vector has length {got}, layout expects {expected}")]
    Layout { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("bracket ({a}, {b}, {c}) does not enclose a minimum")]
    Bracket { a: f64, b: f64, c: f64 },

    #[error("normalization undefined: reference curve has zero range")]
    UndefinedNormalization,

    #[error("curves are not aligned: {0}")]
    Alignment(String),

    #[error("format error at row {row}: {reason}")]
    Format { row: usize, reason: String },

    #[error("format error: {0}")]
    FormatFile(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("json error: {0}")]
    Json(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
