//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A serialized volume, network or dataset file is malformed. `field`
    /// names the offending part of the format.
    #[error("format error in `{field}`: {message}")]
    Format { field: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Cross-scene operation between volumes trained against different
    /// renderer weights.
    #[error("incompatible scenes: {0}")]
    IncompatibleScenes(String),

    /// Edit-script parsing or resolution failure.
    #[error("script error: {0}")]
    Script(String),

    /// Training diverged; carries enough context to locate the step.
    #[error(
        "non-finite loss at iteration {iteration}, scene `{scene}`: \
         recon={loss_r}, tv={loss_tv}"
    )]
    NonFiniteLoss {
        iteration: u64,
        scene: String,
        loss_r: f64,
        loss_tv: f64,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: msg.into(),
        }
    }
}
