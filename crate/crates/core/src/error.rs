use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("gradient requested for non-scalar value of shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },
    #[error("invalid slide `{slide}`: field `{field}`: {reason}")]
    InvalidSlide {
        slide: String,
        field: &'static str,
        reason: String,
    },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("training diverged at epoch {epoch}, step {step}: {diagnostic}")]
    Diverged {
        epoch: usize,
        step: usize,
        diagnostic: String,
    },
    #[error("test slide `{0}` is present in the retrieval index")]
    Leakage(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
