//! Crate-wide error type.

use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    /// Missing mandatory column or malformed schema/config file.
    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Mobility series gap encountered under the fail-fast fill policy.
    #[error("mobility series has no usable value for {date}")]
    MissingDay { date: NaiveDate },

    #[error("no change point detected")]
    NoChangePoint,

    /// Grid geometry mismatch or invalid polygon.
    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("projection domain error: {0}")]
    ProjectionDomain(String),

    /// Data unsuitable for a data-driven rule (e.g. zero variance).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("osm parse error at byte {offset}: {message}")]
    OsmParse { offset: u64, message: String },

    #[error("grid of {cells} cells exceeds the configured maximum of {max}")]
    GridTooLarge { cells: usize, max: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
