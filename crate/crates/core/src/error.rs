use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("cannot decode image {path}")]
    ImageDecode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("cannot encode image {path}")]
    ImageEncode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("unknown {kind} token `{token}`")]
    UnknownToken { kind: &'static str, token: String },

    #[error("{context}: image is {image_w}x{image_h} but mask is {mask_w}x{mask_h}")]
    DimensionMismatch {
        context: String,
        image_w: u32,
        image_h: u32,
        mask_w: u32,
        mask_h: u32,
    },

    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("class mismatch: {left} vs {right}")]
    ClassMismatch { left: String, right: String },

    #[error("view mismatch: expected {expected}, got {actual}")]
    ViewMismatch { expected: String, actual: String },

    #[error("over-sampling failed for class {class}: could not place {missing} off-grid patches within {attempts} attempts per patch")]
    BalanceExhausted {
        class: String,
        missing: usize,
        attempts: usize,
    },

    #[error("class {class} has only {available} {unit} but k={k} folds were requested")]
    ClassTooSmall {
        class: String,
        available: usize,
        unit: &'static str,
        k: usize,
    },

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("feature dimensionality mismatch: model expects {expected}, input has {actual}")]
    Dimensionality { expected: usize, actual: usize },

    #[error("label index {label} outside class list of length {n_classes}")]
    LabelOutOfRange { label: usize, n_classes: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
