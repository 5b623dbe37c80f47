use std::fmt;

use span_core::Error;

/// A failed command and the exit code it maps to.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Failure::Data(msg.into())
    }

    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) => Failure::Usage(msg),
            Error::NonFinite(_) => Failure::Numeric(msg),
            Error::Io { .. }
            | Error::Image { .. }
            | Error::Format(_)
            | Error::Dataset(_)
            | Error::InvalidArgument(_)
            | Error::ShapeMismatch { .. }
            | Error::InvalidShape(_)
            | Error::OutOfRange(_)
            | Error::AlreadyFused
            | Error::MissingTape => Failure::Data(msg),
        }
    }
}
