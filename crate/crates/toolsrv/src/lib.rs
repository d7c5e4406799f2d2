//! Command-line entry points for every pipeline stage and the HTTP service
//! backing the annotation tool.

pub mod cli;
pub mod dataset;
pub mod server;

use thiserror::Error;

/// Errors raised by the CLI and the annotation service.
#[derive(Debug, Error)]
pub enum ToolError {
    /// Bad arguments or configuration; the CLI exits with code 1.
    #[error("{0}")]
    Usage(String),
    /// Missing or malformed data; the CLI exits with code 2.
    #[error("{0}")]
    Data(String),
    /// A request that fails validation.
    #[error("{0}")]
    Invalid(String),
    /// A well-formed record that cannot be committed.
    #[error("{0}")]
    Unprocessable(String),
    #[error("{0}")]
    NotFound(String),
}

impl ToolError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ToolError::Usage(_) => 1,
            _ => 2,
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for ToolError {
            fn from(e: $t) -> Self {
                ToolError::Data(e.to_string())
            }
        }
    )*};
}

data_error!(
    std::io::Error,
    serde_json::Error,
    raw2raw_core::rawio::RawIoError,
    raw2raw_core::synthcam::SynthError,
    raw2raw_core::calibfit::CalibError,
    raw2raw_core::evalkit::EvalError,
    raw2raw_core::baselines::BaselineError,
    raw2raw_core::nnmap::NnError
);
