use thiserror::Error;

/// Errors produced by the hahn library.
#[derive(Debug, Error)]
pub enum HahnError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("neuron {0} has zero cumulative activity")]
    ZeroActivity(usize),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("model file error in section {section}: {message}")]
    Format { section: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, HahnError>;

impl HahnError {
    pub(crate) fn dims(context: impl Into<String>, expected: usize, got: usize) -> Self {
        HahnError::DimensionMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    pub(crate) fn format(section: impl Into<String>, message: impl Into<String>) -> Self {
        HahnError::Format {
            section: section.into(),
            message: message.into(),
        }
    }
}
