//! Error type shared across the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch at {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite values in {what} at layer {layer}{}", iteration.map(|i| format!(" (attack iteration {i})")).unwrap_or_default())]
    NonFinite {
        layer: usize,
        what: &'static str,
        iteration: Option<usize>,
    },

    #[error("label {label} out of range for {num_classes} classes (sample {index})")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("pixel value {value} outside [0, 1] at element {index}")]
    PixelOutOfRange { index: usize, value: f64 },

    #[error("dataset file {path} is missing")]
    MissingFile { path: PathBuf },

    #[error("dataset file {path} is truncated: {len} bytes is not a multiple of the {record} byte record size")]
    TruncatedRecord {
        path: PathBuf,
        len: u64,
        record: u64,
    },

    #[error("invalid label byte {label} in record {record} of {path}")]
    BadLabelByte {
        path: PathBuf,
        record: usize,
        label: u8,
    },

    #[error("unsupported model file version {found} (this build reads version {supported})")]
    ModelVersion { found: u32, supported: u32 },

    #[error("model file checksum mismatch: payload is corrupted")]
    ChecksumMismatch,

    #[error("model file dtype is {found}, requested {requested}")]
    DtypeMismatch {
        found: &'static str,
        requested: &'static str,
    },

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error("invalid configuration at `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("unknown attack preset `{0}`")]
    UnknownPreset(String),

    #[error("attack failed on sample {sample}: {source}")]
    AttackFailed {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at epoch {epoch}: loss is non-finite")]
    Diverged { epoch: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}
