use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration violates an assumption required by a policy.
    #[error("configuration error: {0}")]
    Config(String),

    /// `next`/`update` (or `act`/`feed`) were not called in strict alternation.
    #[error("protocol violation: {0}")]
    Protocol(&'static str),

    #[error("arm {arm} out of range for a machine with {arms} arms")]
    ArmOutOfRange { arm: usize, arms: usize },

    /// Policy and machine disagree on the number of arms or the dimension.
    #[error("arity mismatch: {0}")]
    Arity(String),

    #[error("bin at depth {depth} cannot burst: depth cap is {cap}")]
    DepthCap { depth: u32, cap: u32 },

    #[error("bin is not live")]
    NotLive,
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by the user's configuration rather than a
    /// runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Config(_) | Error::Arity(_)
        )
    }
}
