use std::fmt;

/// Error type shared across the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum CoupletError {
    /// Operand dimensions do not conform; carries the operation name and
    /// a description of the offending shapes.
    Shape { op: String, detail: String },
    /// Invalid argument value (empty input, out-of-range index, ...).
    Argument(String),
    /// NaN/Inf or a malformed probability distribution in a numeric kernel.
    Numeric(String),
    /// I/O failure, flattened to a message so the error stays `Clone`.
    Io(String),
    /// Malformed file content; `line` is 1-based where applicable.
    Format { line: usize, msg: String },
    /// Training diverged or hit an invalid state at `step`.
    Training { step: usize, msg: String },
    /// Beam decode terminated without any valid complete hypothesis.
    Decode(String),
    /// Head selection could not produce two usable characters.
    Selection(String),
}

impl fmt::Display for CoupletError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoupletError::Shape { op, detail } => write!(f, "shape mismatch in {op}: {detail}"),
            CoupletError::Argument(msg) => write!(f, "invalid argument: {msg}"),
            CoupletError::Numeric(msg) => write!(f, "numeric error: {msg}"),
            CoupletError::Io(msg) => write!(f, "i/o error: {msg}"),
            CoupletError::Format { line, msg } => write!(f, "format error at line {line}: {msg}"),
            CoupletError::Training { step, msg } => write!(f, "training failed at step {step}: {msg}"),
            CoupletError::Decode(msg) => write!(f, "decode error: {msg}"),
            CoupletError::Selection(msg) => write!(f, "head selection error: {msg}"),
        }
    }
}

impl std::error::Error for CoupletError {}

impl From<std::io::Error> for CoupletError {
    fn from(e: std::io::Error) -> Self {
        CoupletError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CoupletError>;
