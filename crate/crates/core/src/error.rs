use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("sample rate {actual} Hz not supported here (expected {expected} Hz); resample the input first")]
    SampleRate { expected: u32, actual: u32 },

    #[error("not enough data: need at least {required} {what}, got {available}")]
    InsufficientData {
        what: &'static str,
        required: usize,
        available: usize,
    },

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u8, found: u8 },

    #[error("truncated payload: expected {expected_bits} bits, found {actual_bits}")]
    Truncated {
        expected_bits: u64,
        actual_bits: u64,
    },

    #[error("nonzero padding bits in final byte")]
    NonZeroPadding,

    #[error("{0} unexpected trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("checksum mismatch in section {tag}: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum {
        tag: String,
        stored: u32,
        computed: u32,
    },

    #[error("unknown section tag {0:?}")]
    UnknownSection(String),

    #[error("section {0} is missing")]
    MissingSection(&'static str),

    #[error("section order violated: {0}")]
    SectionOrder(String),

    #[error("stream already finished")]
    StreamFinished,

    #[error("no usable audio in {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },

    #[error("{} unreadable files:\n{}", .0.len(), .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    UnreadableFiles(Vec<Error>),

    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by malformed or incompatible files, as opposed
    /// to bad data or parameters.
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::Version { .. }
                | Error::Truncated { .. }
                | Error::NonZeroPadding
                | Error::TrailingBytes(_)
                | Error::MalformedHeader(_)
                | Error::Checksum { .. }
                | Error::UnknownSection(_)
                | Error::MissingSection(_)
                | Error::SectionOrder(_)
                | Error::Wav(_)
        )
    }
}
