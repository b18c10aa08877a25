use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("behavior chain is not ergodic: {0}")]
    NotErgodic(String),

    #[error("support violation at state {state}, action {action}: {detail}")]
    Coverage {
        state: usize,
        action: usize,
        detail: String,
    },

    #[error("cross-fitting violation: {0}")]
    CrossFitting(String),

    #[error("evaluation off the state-action grid: ({state}, {action})")]
    OffGrid { state: usize, action: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
