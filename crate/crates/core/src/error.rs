use alloc::string::String;

/// Errors produced by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("layer {layer}: expected width {expected}, found {found}")]
    LayerMismatch {
        layer: usize,
        expected: usize,
        found: usize,
    },

    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("distance must be positive, got {0}")]
    InvalidDistance(f64),

    #[error("{what} needs at least {needed} samples, found {found}")]
    TooFewSamples {
        what: &'static str,
        needed: usize,
        found: usize,
    },
}

pub type Result<T> = core::result::Result<T, Error>;
