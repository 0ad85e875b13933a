use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised anywhere in the analysis pipeline.
///
/// Variants split into input problems (bad files, bad parameters) and
/// numerical failures; [`Error::is_numerical`] tells them apart.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: unrecognised header {header:?}")]
    UnknownFormat { path: PathBuf, header: Vec<String> },

    #[error("{path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("duplicate observation for {country} in {year}")]
    DuplicateObservation { country: String, year: i32 },

    #[error("panel has {} missing observation(s): {}", .0.len(), format_gaps(.0))]
    MissingObservations(Vec<(String, i32)>),

    #[error("unknown country id {0:?}")]
    UnknownCountry(String),

    #[error("self-edge on {0:?} in adjacency list")]
    SelfEdge(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("distance {value} between {a:?} and {b:?} exceeds N = {n}; enable distance rescaling")]
    DistanceExceedsN {
        a: String,
        b: String,
        value: f64,
        n: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::Numerical(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}

fn format_gaps(gaps: &[(String, i32)]) -> String {
    const SHOWN: usize = 20;
    let mut out = gaps
        .iter()
        .take(SHOWN)
        .map(|(c, y)| format!("{c}/{y}"))
        .collect::<Vec<_>>()
        .join(", ");
    if gaps.len() > SHOWN {
        out.push_str(&format!(", ... ({} more)", gaps.len() - SHOWN));
    }
    out
}
