use thiserror::Error;

/// Errors surfaced by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite entry in {context}")]
    NonFinite { context: &'static str },

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("degenerate state: {0}")]
    Degenerate(String),

    #[error("margin is undefined for fewer than two samples")]
    UndefinedMargin,

    #[error("integration diverged; last finite state at t = {last_t}")]
    Diverged { last_t: f64 },

    #[error("invalid bound constants: {0}")]
    InvalidConstants(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("invariant violation: {0}")]
    InvariantViolation(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }
}
