use thiserror::Error;

/// Unified error type for the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A relaxation pair must satisfy T1 > T2 > 0 (milliseconds).
    #[error("invalid relaxation pair T1={t1} ms, T2={t2} ms (need T1 > T2 > 0, finite)")]
    InvalidTheta { t1: f64, t2: f64 },

    /// Sequence parameters out of range (empty flip train, TR ≤ TE, ...).
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    /// A scalar or config field outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Operands whose shapes don't line up.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    /// Numerical failure with no sensible fallback (non-finite objective, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Filesystem access failure, carrying the offending path.
    #[error("{path}: {source}")]
    File {
        path: String,
        source: std::io::Error,
    },

    /// A file that exists but doesn't parse as the expected format.
    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            what: what.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
