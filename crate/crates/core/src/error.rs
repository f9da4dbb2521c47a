use alloc::string::String;

/// Errors raised by the analysis routines.
///
/// Numerical blow-up during integration is not an error: integrators return
/// the partial trajectory with a flag set.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {block}: expected {expected}, got {got}")]
    DimensionMismatch {
        block: String,
        expected: usize,
        got: usize,
    },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("empty sample set")]
    EmptySampleSet,
    #[error("non-finite value while evaluating {what}")]
    NonFinite { what: String },
    #[error("infeasible gain budget: {0}")]
    Infeasible(String),
    #[error("no forward-invariant level found in the searched range")]
    LevelNotFound,
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("certification refused: {0}")]
    Refused(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
