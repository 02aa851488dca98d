use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("annotation stream error at byte {offset}: {msg}")]
    AnnotationParse { offset: usize, msg: String },

    #[error("csv record error at line {line}: {msg}")]
    Csv { line: u64, msg: String },

    #[error("record {record}: no beats")]
    NoBeats { record: String },

    #[error("record {record}: {msg}")]
    Record { record: String, msg: String },

    #[error("{scheme}: value {value} does not fit the target width")]
    Overflow { scheme: String, value: i64 },

    #[error("{scheme}: degenerate normalization range (min == max == {value})")]
    DegenerateRange { scheme: String, value: i64 },

    #[error("{scheme}: byte length {len} is not a multiple of element width {width}")]
    MisalignedLength { scheme: String, len: usize, width: usize },

    #[error("{scheme}: scheme is lossy and cannot be decoded")]
    NotLossless { scheme: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("distance matrix entry ({row}, {col}): {source}")]
    MatrixEntry {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("distance matrix sanity check failed at ({row}, {col}): value {value}")]
    MatrixSanity { row: usize, col: usize, value: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("need at least {needed} records, found {found}")]
    TooFewRecords { needed: usize, found: usize },

    #[error("n = {n} shots exceeds the minority class count; feasible maximum is {max}")]
    ShotsTooLarge { n: usize, max: usize },

    #[error("invalid configuration for `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("matrix file: {0}")]
    MatrixFormat(String),

    #[error("checksum mismatch for {file}: expected {expected}, got {actual}")]
    Checksum {
        file: String,
        expected: String,
        actual: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
