use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("realization {realization}, event {event}: type {kind} out of range for d = {d}")]
    TypeOutOfRange {
        realization: usize,
        event: usize,
        kind: usize,
        d: usize,
    },

    #[error("realization {realization}, event {event}: event times are not non-decreasing")]
    NonMonotoneTime { realization: usize, event: usize },

    #[error("realization {realization}, event {event}: time {time} outside window [{t_minus}, {t_plus}]")]
    OutOfWindow {
        realization: usize,
        event: usize,
        time: f64,
        t_minus: f64,
        t_plus: f64,
    },

    #[error("realization {realization}: invalid observation window [{t_minus}, {t_plus}]")]
    InvalidWindow {
        realization: usize,
        t_minus: f64,
        t_plus: f64,
    },

    #[error("realization {realization}: more than {cap} events, the process looks explosive")]
    Explosion { realization: usize, cap: usize },

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("{}:{line}: unknown node id {id} (d = {d})", path.display())]
    UnknownNode {
        path: PathBuf,
        line: u64,
        id: usize,
        d: usize,
    },

    /// A validation error located in an input file.
    #[error("{}:{line}: {inner}", path.display())]
    InFile {
        path: PathBuf,
        line: u64,
        inner: Box<Error>,
    },

    #[error("unsupported format version {found} in {} (expected {expected})", path.display())]
    FormatVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used by the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch(_) => "dimension_mismatch",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::TypeOutOfRange { .. } => "type_out_of_range",
            Error::NonMonotoneTime { .. } => "non_monotone_time",
            Error::OutOfWindow { .. } => "out_of_window",
            Error::InvalidWindow { .. } => "invalid_window",
            Error::Explosion { .. } => "explosion",
            Error::Parse { .. } => "parse",
            Error::UnknownNode { .. } => "unknown_node",
            Error::InFile { inner, .. } => inner.kind(),
            Error::FormatVersion { .. } => "format_version",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
