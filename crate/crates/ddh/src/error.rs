//! Crate-wide error type.

use thiserror::Error;

/// All failures surfaced by this crate.
///
/// The variants mirror the failure classes of the public operations:
/// `Spec` for malformed network/architecture descriptions, `Input` for
/// call-site shape or argument problems, `Data` for dataset ingestion,
/// `Format` for on-disk file decoding, `Numeric` for non-finite values
/// during optimization.
#[derive(Debug, Error)]
pub enum Error {
    #[error("spec error: {0}")]
    Spec(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("state error: {0}")]
    State(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("bounds error: {0}")]
    Bounds(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 = usage/config, 2 = data/file,
    /// 3 = numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
