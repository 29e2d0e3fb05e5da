use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid length {len}: {reason}")]
    Length { len: usize, reason: &'static str },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("oracle supports lengths up to {max}, got {len}")]
    Size { len: usize, max: usize },

    #[error("corrupt block data at index {index}: {reason}")]
    Corruption { index: usize, reason: String },

    #[error("bad magic {found:?}, expected \"ITQ3\"")]
    BadMagic { found: [u8; 4] },

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated stream: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("block {block}: {source}")]
    InBlock {
        block: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn in_block(self, block: usize) -> Self {
        Error::InBlock {
            block,
            source: Box::new(self),
        }
    }

    /// Stable, greppable identifier for each error class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Length { .. } => "length",
            Error::Domain(_) => "domain",
            Error::Size { .. } => "size",
            Error::Corruption { .. } => "corruption",
            Error::BadMagic { .. } => "bad-magic",
            Error::UnsupportedVersion(_) => "unsupported-version",
            Error::Truncated { .. } => "truncated",
            Error::SizeMismatch(_) => "size-mismatch",
            Error::Shape(_) => "shape",
            Error::InBlock { source, .. } => source.code(),
            Error::Io(_) => "io",
        }
    }

    /// True for errors that come from reading or parsing external data, as
    /// opposed to invalid arguments.
    pub fn is_format_or_io(&self) -> bool {
        match self {
            Error::Corruption { .. }
            | Error::BadMagic { .. }
            | Error::UnsupportedVersion(_)
            | Error::Truncated { .. }
            | Error::SizeMismatch(_)
            | Error::Io(_) => true,
            Error::InBlock { source, .. } => source.is_format_or_io(),
            _ => false,
        }
    }
}
