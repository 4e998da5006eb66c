use thiserror::Error;

/// Errors produced anywhere in the synthesis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite logit {value} at row {row}, column {col}")]
    NonFiniteLogit { row: usize, col: usize, value: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("bin {bin} is not strictly positive ({value}); smooth the histogram first")]
    NonPositiveBin { bin: usize, value: f64 },

    #[error("reweighting denominator underflowed to zero")]
    Underflow,

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid duration token: {0}")]
    InvalidDurationToken(String),

    #[error("illegal duration token {id} at cursor {cursor}")]
    IllegalDuration { id: usize, cursor: usize },

    #[error("out-of-order timestamp {got} after {last}")]
    OutOfOrder { last: f64, got: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("scripted program has no rule for frame {frame}, cursor {cursor}, history digest {digest:#018x}")]
    ProgramMiss { frame: usize, cursor: usize, digest: u64 },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("session: {0}")]
    Session(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
