use std::path::PathBuf;

use crate::config::ConfigViolation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {}", join(.0))]
    InvalidConfig(Vec<ConfigViolation>),

    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("dataset not found: {}", .0.display())]
    DatasetNotFound(PathBuf),

    #[error("bad magic in {}: expected {expected:#010x}, found {found:#010x}", .path.display())]
    BadIdxMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("truncated payload in {}: expected {expected} bytes, found {found}", .path.display())]
    TruncatedPayload {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("raw image file length {len} is not a multiple of {frame} ({width}x{height})")]
    RawLength {
        len: u64,
        frame: usize,
        width: usize,
        height: usize,
    },

    #[error("labels line {line}: {message}")]
    BadLabel { line: usize, message: String },

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("pixel value {value} at index {index} is outside [0, 1]")]
    PixelDomain { index: usize, value: f32 },

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("learning rate {0} is outside (0, 1]")]
    AlphaOutOfRange(f64),

    #[error("support vector contains NaN")]
    NanSupport,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid pipeline: {0}")]
    InvalidPipeline(String),

    #[error("pipeline stage {stage} failed: {message}")]
    StageFailed { stage: &'static str, message: String },

    #[error("parameter file: bad magic {found:?}")]
    BadModelMagic { found: [u8; 4] },

    #[error("parameter file: unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("parameter file: unknown precision tag {0}")]
    UnknownPrecisionTag(u8),

    #[error("parameter file: CRC mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    CrcMismatch { stored: u32, computed: u32 },

    #[error("parameter file: truncated ({found} bytes, need {needed})")]
    TruncatedModel { found: usize, needed: usize },

    #[error("parameter file: {0}")]
    MalformedModel(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid sweep spec: {0}")]
    InvalidSweep(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn join(v: &[ConfigViolation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dataset_io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::DatasetNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Whether the failure stems from bad input (as opposed to a runtime fault).
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::StageFailed { .. })
    }

    /// Short machine-readable category, stable across releases.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid-config",
            Error::ConfigParse { .. } => "config-parse",
            Error::Io { .. } => "io",
            Error::DatasetNotFound(_) => "dataset-not-found",
            Error::BadIdxMagic { .. } => "bad-magic",
            Error::TruncatedPayload { .. } => "truncated-payload",
            Error::CountMismatch { .. } => "count-mismatch",
            Error::RawLength { .. } => "raw-length",
            Error::BadLabel { .. } => "bad-label",
            Error::LabelOutOfRange { .. } => "label-out-of-range",
            Error::PixelDomain { .. } => "pixel-domain",
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::AlphaOutOfRange(_) => "alpha-out-of-range",
            Error::NanSupport => "nan-support",
            Error::EmptyDataset => "empty-dataset",
            Error::IndexOutOfRange { .. } => "index-out-of-range",
            Error::InvalidPipeline(_) => "invalid-pipeline",
            Error::StageFailed { .. } => "stage-failed",
            Error::BadModelMagic { .. } => "bad-model-magic",
            Error::UnsupportedVersion(_) => "unsupported-version",
            Error::UnknownPrecisionTag(_) => "unknown-precision",
            Error::CrcMismatch { .. } => "crc-mismatch",
            Error::TruncatedModel { .. } => "truncated-model",
            Error::MalformedModel(_) => "malformed-model",
            Error::LengthMismatch { .. } => "length-mismatch",
            Error::InvalidSweep(_) => "invalid-sweep",
            Error::InvalidArgument(_) => "invalid-argument",
        }
    }
}
