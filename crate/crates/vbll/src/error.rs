//! Crate-wide error type.

/// Errors surfaced by the library.
///
/// Shape and argument validation happens at public API boundaries; internal
/// tape operations assert their own invariants because a violation there is a
/// programming error, not a data error.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two arrays that must agree in shape do not.
    #[error("shape mismatch in {context}: {detail}")]
    ShapeMismatch {
        context: &'static str,
        detail: String,
    },

    /// An argument is outside its documented domain.
    #[error("invalid argument in {context}: {detail}")]
    InvalidArgument {
        context: &'static str,
        detail: String,
    },

    /// An objective term became non-finite; training aborts with the term
    /// named so divergence is diagnosable instead of silently producing NaN.
    #[error("non-finite value {value} in term `{term}` ({context})")]
    NonFinite {
        term: String,
        value: f64,
        context: String,
    },

    /// A numerical routine failed (e.g. Cholesky on a non-PD matrix).
    #[error("numerical failure in {context}: {detail}")]
    Numerical {
        context: &'static str,
        detail: String,
    },

    /// Filesystem failure, tagged with the path involved.
    #[error("I/O error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A file failed to parse; `line` is 1-based.
    #[error("parse error at {path}:{line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    /// Configuration is inconsistent or incomplete.
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(context: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(context: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            context,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
