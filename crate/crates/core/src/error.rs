//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid age grid: {0}")]
    InvalidGrid(String),

    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("death probability {value} out of [0, 1] at year {year}, age {age}")]
    QxOutOfRange { year: i32, age: String, value: f64 },

    #[error("death probability at the last age must be 1 (year {year}, got {value})")]
    LastQxNotOne { year: i32, value: f64 },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing value at year {year}, age {age}")]
    MissingValue { year: i32, age: String },

    #[error("gap at {0}")]
    YearGap(i32),

    #[error("year {year}: missing ages {missing:?}")]
    MissingAges { year: i32, missing: Vec<String> },

    #[error("zero or negative count at year {year}, age {age}; use the CDF transform instead")]
    ZeroOrNegativeCount { year: i32, age: String },

    #[error("degenerate CDF at year {year}, age {age} (logit is infinite)")]
    DegenerateCdf { year: i32, age: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid component count: {0}")]
    InvalidK(String),

    #[error("insufficient data: need {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("horizon must be at least 1")]
    ZeroHorizon,

    #[error("zero residual standard deviation with nonzero residual at age index {age}")]
    DegenerateGamma { age: usize },

    #[error("invalid significance level {0}; must lie in (0, 1)")]
    InvalidAlpha(f64),

    #[error("lower bound {lower} exceeds upper bound {upper}")]
    InvertedInterval { lower: f64, upper: f64 },

    #[error("empty evaluation set")]
    EmptyEvaluation,

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("{0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("{context}: {inner}")]
    Context { context: String, inner: Box<Error> },
}

impl Error {
    /// Wraps the error with a description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            inner: Box::new(self),
        }
    }

    /// The innermost error, with every context layer removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { inner, .. } => inner.root(),
            e => e,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}
