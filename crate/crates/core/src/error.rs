use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A configuration or input value violates its documented invariant.
    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown channel id {0:?}")]
    UnknownChannel(String),

    #[error("empty channel selection")]
    EmptySelection,

    #[error("record {subject} is missing modality {modality}")]
    MissingModality { subject: String, modality: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid { field: field.into(), reason: reason.into() }
    }

    /// Whether the error stems from user-supplied configuration or data
    /// (as opposed to a failure while computing).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. }
                | Error::UnknownChannel(_)
                | Error::EmptySelection
                | Error::MissingModality { .. }
        )
    }
}
