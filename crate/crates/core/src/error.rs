use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the geocd library.
#[derive(Debug, Error)]
pub enum GeoError {
    #[error("point cloud must contain at least one point")]
    EmptyCloud,

    #[error("non-finite coordinate at point {index}")]
    NonFinite { index: usize },

    #[error("degenerate cloud: all points coincide (bounding-box diagonal is 0)")]
    DegenerateCloud,

    #[error("{path}: empty file")]
    EmptyFile { path: PathBuf },

    #[error("{path}: parse error at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: ParseLocation,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("k = {k} is too large for a merged set of {points} points (max {max})")]
    KTooLarge { k: usize, points: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error(
        "kNN edge {from}->{to} has length {length} which exceeds the sentinel {sentinel}; normalize the clouds first"
    )]
    EdgeExceedsSentinel {
        from: usize,
        to: usize,
        length: f64,
        sentinel: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Where in an input file a parse error occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseLocation {
    Line(usize),
    Byte(usize),
}

impl std::fmt::Display for ParseLocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseLocation::Line(l) => write!(f, "line {l}"),
            ParseLocation::Byte(b) => write!(f, "byte offset {b}"),
        }
    }
}

impl GeoError {
    /// True for errors caused by malformed or unreadable input data, as
    /// opposed to invalid parameters.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            GeoError::EmptyCloud
                | GeoError::NonFinite { .. }
                | GeoError::DegenerateCloud
                | GeoError::EmptyFile { .. }
                | GeoError::Parse { .. }
                | GeoError::Io { .. }
        )
    }
}

pub type Result<T, E = GeoError> = std::result::Result<T, E>;
