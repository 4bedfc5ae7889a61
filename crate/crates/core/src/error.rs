use std::fmt;

/// Failure categories shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A configuration value is outside the supported range.
    #[error("configuration error: {0}")]
    Config(String),
    /// A qubit or sample index is out of bounds.
    #[error("index error: {0}")]
    Index(String),
    /// Input that cannot be normalized or encoded (e.g. an all-zero vector).
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// Non-finite values encountered in numeric code.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Shape or precondition violation between cooperating values.
    #[error("contract error: {0}")]
    Contract(String),
    /// The requested operation is not defined for the given input.
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// Malformed binary file.
    #[error("format error at offset {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Index(_) => ErrorKind::Index,
            Error::Degenerate(_) => ErrorKind::Degenerate,
            Error::Numeric(_) => ErrorKind::Numeric,
            Error::Contract(_) => ErrorKind::Contract,
            Error::Unsupported(_) => ErrorKind::Unsupported,
            Error::Format { .. } => ErrorKind::Format,
            Error::Io(_) => ErrorKind::Io,
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Index,
    Degenerate,
    Numeric,
    Contract,
    Unsupported,
    Format,
    Io,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorKind::Config => "config",
            ErrorKind::Index => "index",
            ErrorKind::Degenerate => "degenerate",
            ErrorKind::Numeric => "numeric",
            ErrorKind::Contract => "contract",
            ErrorKind::Unsupported => "unsupported",
            ErrorKind::Format => "format",
            ErrorKind::Io => "io",
        };
        f.write_str(s)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
