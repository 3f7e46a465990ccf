use alloc::string::String;
use core::fmt;

/// Failures raised by the core library.
///
/// Shape errors are contract violations between an operation and its
/// inputs; `Invalid` covers rejected arguments (bad sizes, empty sets,
/// impossible scripts).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    Shape { op: &'static str, detail: String },
    Invalid { what: &'static str, detail: String },
    NonFinite { what: &'static str },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape mismatch in {op}: {detail}"),
            Error::Invalid { what, detail } => write!(f, "invalid {what}: {detail}"),
            Error::NonFinite { what } => write!(f, "non-finite value in {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
