use thiserror::Error;

/// Errors surfaced by the simulator, solvers and experiment runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("policy {policy} is not defined under {dynamics} dynamics")]
    UnsupportedDynamics { policy: String, dynamics: &'static str },

    #[error("exact enumeration refused: {n} vertices exceeds the cap of {cap}")]
    TooLargeForExact { n: usize, cap: usize },

    #[error("{path}:{line}: {message}")]
    Config { path: String, line: usize, message: String },

    #[error("malformed edge list at line {line}: {message}")]
    EdgeList { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter { name, reason: reason.into() }
}
