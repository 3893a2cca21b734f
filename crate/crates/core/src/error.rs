use thiserror::Error;

/// Errors raised by the kinematic, control and trial layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{what} index {index} out of range (max {max})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        max: usize,
    },

    #[error("reference mismatch: {0}")]
    ReferenceMismatch(String),

    #[error("operation not valid in mode {0}")]
    ModeContract(String),

    #[error("unknown task id {0}")]
    UnknownTask(u8),

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("line {line}: {message}")]
    Log { line: usize, message: String },

    #[error("inverse kinematics did not converge (residual {residual:.3e})")]
    IkNoConvergence { residual: f64 },

    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
