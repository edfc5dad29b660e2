//! Crate-wide error type and the exit-code families the CLI maps it to.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("duplicate key: {country} {year}-{month:02}")]
    DuplicateKey { country: String, year: i32, month: u32 },

    #[error("unbalanced panel: {country} has no row for {year}-{month:02}")]
    UnbalancedPanel { country: String, year: i32, month: u32 },

    #[error("negative flow for {country} {year}-{month:02}: {value}")]
    NegativeFlow { country: String, year: i32, month: u32, value: f64 },

    #[error("ragged features: record {record} has {got} fields, header has {expected}")]
    RaggedFeatures { record: usize, got: usize, expected: usize },

    #[error("cannot parse {column:?} value {text:?} on record {record}")]
    Parse { record: usize, column: String, text: String },

    #[error("threshold must be positive, got {0}")]
    NonPositiveThreshold(f64),

    #[error("unknown country: {0}")]
    UnknownCountry(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("series of length {len} too short for segments of {min_segment}")]
    SeriesTooShort { len: usize, min_segment: usize },

    #[error("no rows survive lagging at horizon {horizon}")]
    InsufficientHistory { horizon: u32 },

    #[error("feature column {0:?} matches no role pattern")]
    UnmappedColumn(String),

    #[error("feature column {0:?} is missing in every training row")]
    AllMissingColumn(String),

    #[error("labels contain a single class; both are required")]
    SingleClass,

    #[error("every feature column is constant")]
    DegenerateFeatures,

    #[error("{rows} rows is too few to fit with min_rows {min_rows}")]
    TooFewRows { rows: usize, min_rows: usize },

    #[error("feature width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    #[error("no positive labels present")]
    NoPositives,

    #[error("class {class} has {count} rows, fewer than the {folds} folds")]
    TooFewRowsPerClass { class: String, count: usize, folds: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("every grid-search candidate failed; first failure: {0}")]
    NoViableCandidate(String),

    #[error("leakage audit failed: row {row}, column {column}: {detail}")]
    LeakageDetected { row: usize, column: String, detail: String },

    #[error("invalid scenario script: {0}")]
    InvalidScript(String),

    #[error("invalid config: {0}")]
    ConfigInvalid(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse grouping used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorFamily {
    Config,
    MissingArtifact,
    Data,
    Numerical,
}

impl ErrorFamily {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorFamily::Config => 2,
            ErrorFamily::MissingArtifact => 3,
            ErrorFamily::Data => 4,
            ErrorFamily::Numerical => 5,
        }
    }
}

impl Error {
    pub fn family(&self) -> ErrorFamily {
        match self {
            Error::ConfigInvalid(_) => ErrorFamily::Config,
            Error::MissingArtifact(_) => ErrorFamily::MissingArtifact,
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => {
                ErrorFamily::MissingArtifact
            }
            Error::NumericalFailure(_) | Error::NoViableCandidate(_) => ErrorFamily::Numerical,
            _ => ErrorFamily::Data,
        }
    }
}
