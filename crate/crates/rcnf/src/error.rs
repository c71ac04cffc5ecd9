//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor operation received operands with incompatible shapes.
    /// `detail` names the offending axis.
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Tensor construction with a zero or otherwise invalid extent.
    #[error("invalid tensor shape {shape:?}: {detail}")]
    InvalidShape { shape: Vec<usize>, detail: String },

    /// A NaN or infinity appeared in a tensor while finite checks were active.
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    /// `backward` was called on a tensor with more than one element.
    #[error("backward requires a scalar loss, got {numel} elements")]
    NonScalarLoss { numel: usize },

    /// `backward` was called twice on the same tape.
    #[error("backward already ran on this tape")]
    BackwardAlreadyRun,

    /// `backward` was called on a value with no gradient-requiring inputs.
    #[error("backward on a detached value: no input requires a gradient")]
    DetachedLoss,

    /// A variable from one tape was used with a different tape.
    #[error("variable does not belong to this tape")]
    TapeMismatch,

    /// An axis argument was out of range for the tensor's rank.
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    /// A model or run configuration failed validation.
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    /// The optimizer was stepped with a parameter that has no gradient.
    #[error("missing gradient for parameter '{name}'")]
    MissingGradient { name: String },

    /// An operation that needs at least one element got none.
    #[error("{0} must not be empty")]
    EmptyInput(&'static str),

    /// A label fell outside `[0, num_classes)`.
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    /// A class has too few samples to be split across the requested partitions.
    #[error("class '{class}' has {count} samples, fewer than {required} splits")]
    ClassTooSmall {
        class: String,
        count: usize,
        required: usize,
    },

    /// Split ratios that do not sum to 1.
    #[error("split ratios {ratios:?} sum to {sum}, expected 1")]
    BadRatios { ratios: Vec<f64>, sum: f64 },

    /// A parameter blob on disk does not match the shape in the manifest.
    #[error("checkpoint parameter '{name}': expected {expected} bytes, found {found}")]
    CorruptBlob {
        name: String,
        expected: usize,
        found: usize,
    },

    /// A checkpoint written by an unknown format revision.
    #[error("unknown checkpoint format version {found} (supported: {supported})")]
    UnknownFormatVersion { found: String, supported: u32 },

    /// A checkpoint whose spec does not match the requested one.
    #[error("checkpoint spec mismatch: {detail}")]
    SpecMismatch { detail: String },

    /// Malformed text in a manifest, report, or checkpoint file.
    #[error("parse error in {path}: line {line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    /// Malformed image data.
    #[error("image error: {0}")]
    Image(String),

    /// Dataset-level inconsistency (missing paths, bad pairing, class mismatch).
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
