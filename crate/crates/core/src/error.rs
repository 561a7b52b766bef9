use thiserror::Error;

/// Error type shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or data outside a function's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A guard (size, budget, node limit, overflow) was exceeded.
    #[error("resource limit: {0}")]
    Resource(String),

    /// The requested program has no feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// The operation does not support the requested configuration.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Malformed model text.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Malformed input data (CSV/JSON).
    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn resource(msg: impl Into<String>) -> Self {
        Error::Resource(msg.into())
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible(msg.into())
    }

    pub fn unsupported(msg: impl Into<String>) -> Self {
        Error::Unsupported(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
