use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),

    #[error("lower polariton is not real: {0}")]
    PolaritonDomain(String),

    #[error("trajectory diverged at t = {t}")]
    Diverged { t: f64 },

    #[error("series too short: window needs t = {needed}, data ends at t = {available}")]
    WindowTruncated { needed: f64, available: f64 },

    #[error("all {n} trajectories diverged")]
    AllDiverged { n: usize },

    #[error("schema version mismatch: file has {found}, expected {expected}")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
