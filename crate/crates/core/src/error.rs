use std::path::PathBuf;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Config,
    Internal,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Data => 2,
            ErrorClass::Config => 3,
            ErrorClass::Internal => 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("row length mismatch: candidate has {candidate} points, baseline has {baseline}")]
    LengthMismatch { candidate: usize, baseline: usize },

    #[error("non-finite value {value} at {context} index {index}")]
    NonFinite {
        context: &'static str,
        index: usize,
        value: f64,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate record (chain {chain:?}, index {index}) on lines {first_line} and {second_line}")]
    Duplicate {
        chain: String,
        index: usize,
        first_line: usize,
        second_line: usize,
    },

    #[error("chain {chain:?}: sample index gap, index {missing} is missing")]
    IndexGap { chain: String, missing: usize },

    #[error("inconsistent number of validation points: expected {expected}, found {found} ({context})")]
    MixedLength {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("steps out of order: expected sample index {expected}, got {found}")]
    StepOrder { expected: usize, found: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("series too short: need at least {needed} values, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("chain mismatch: {0}")]
    ChainMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing reference: {0}")]
    MissingReference(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::LengthMismatch { .. }
            | Error::NonFinite { .. }
            | Error::Parse { .. }
            | Error::Duplicate { .. }
            | Error::IndexGap { .. }
            | Error::MixedLength { .. }
            | Error::StepOrder { .. }
            | Error::Degenerate(_)
            | Error::TooShort { .. }
            | Error::ChainMismatch(_)
            | Error::Json(_) => ErrorClass::Data,
            Error::Config(_) | Error::MissingReference(_) | Error::Read { .. } | Error::Io(_) => {
                ErrorClass::Config
            }
            Error::Usage(_) | Error::Invariant(_) => ErrorClass::Internal,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
