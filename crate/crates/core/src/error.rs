use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied something the operation cannot accept.
    #[error("invalid input: {0}")]
    Input(String),

    /// A model parameter lies outside the prior range it is coded against.
    #[error("parameter outside prior range: {0}")]
    OutOfPriorRange(String),

    /// Re-estimation was asked to fit a class with no members.
    #[error("class has no members")]
    EmptyClass,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// True when the failure traces back to user-supplied data, flags or files
    /// rather than to a fault inside the library.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Input(_) | Error::OutOfPriorRange(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_)
        )
    }
}
