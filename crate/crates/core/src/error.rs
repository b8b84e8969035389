use std::fmt;
use std::io;

/// Error type shared by every fallible operation in this crate.
#[derive(Debug)]
pub enum Error {
    /// Operand shapes do not line up; the message names both shapes.
    Shape(String),
    /// A configuration value is out of range or inconsistent.
    Config(String),
    /// A binary file is malformed; `offset` is the byte position at which
    /// reading failed.
    Format { offset: u64, message: String },
    /// A text file is malformed; `line` is 1-based.
    Parse { line: usize, message: String },
    /// A computation produced or received a non-finite value.
    Numeric(String),
    Io(io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Format { offset, message } => {
                write!(f, "format error at byte {offset}: {message}")
            }
            Error::Parse { line, message } => write!(f, "parse error at line {line}: {message}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Io(err) => write!(f, "io error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io(err)
    }
}
