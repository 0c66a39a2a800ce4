//! Shared error type for all core modules.

/// Errors raised by the numeric substrate, the world model, the learners,
/// and the file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor or batch did not have the shape an operation requires.
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// A caller violated a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A computation produced NaN or infinity where a finite value is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The reverse diffusion chain produced a non-finite state.
    #[error("generation failed at denoising step {step}: {reason}")]
    Generation { step: usize, reason: String },

    /// A file did not start with the expected magic string.
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    /// A file declares a format version this build cannot read.
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u8, found: u8 },

    /// A file ended before its declared payload was complete.
    #[error("truncated payload: {0}")]
    Truncated(String),

    /// A file carried bytes past the end of its declared payload.
    #[error("trailing garbage after payload: {0}")]
    TrailingData(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Invalid configuration value or key.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn shape(context: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
