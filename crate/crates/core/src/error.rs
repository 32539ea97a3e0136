//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A group element was used with a group it does not belong to.
    #[error("element {element} does not belong to {group}")]
    ElementMismatch { group: String, element: String },

    /// A group descriptor parameter is out of range.
    #[error("{0}")]
    InvalidGroup(String),

    /// A step distribution failed validation.
    #[error("invalid step distribution: {0}")]
    InvalidDistribution(String),

    /// A functional parameter is out of range.
    #[error("invalid functional: {0}")]
    InvalidFunctional(String),

    /// An escape probability outside (0, 1) was supplied.
    #[error("gamma must lie strictly inside (0, 1), got {0}")]
    GammaOutOfRange(f64),

    /// A summability condition required by a limit evaluation fails.
    #[error("series condition fails: {0}")]
    ConditionFails(String),

    /// A series evaluation did not reach the requested tolerance.
    #[error("series evaluation did not converge: {0}")]
    NonConvergent(String),

    /// A window or split point is incompatible with the trajectory.
    #[error("invalid window [{m}, {n}) for {len} positions")]
    InvalidWindow { m: u64, n: u64, len: u64 },

    /// Configuration text or overrides failed validation.
    #[error("config error: {0}")]
    Config(String),

    /// An experiment was asked to run with unusable parameters.
    #[error("invalid experiment setup: {0}")]
    InvalidExperiment(String),

    /// Wrapper for I/O failures when writing reports.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Wrapper for serialization failures when writing reports.
    #[error("serialization error: {0}")]
    Serialize(String),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
