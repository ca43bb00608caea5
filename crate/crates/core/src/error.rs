//! Error type shared across the crate.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by the tensor core, the region pipeline, and file I/O.
///
/// Every variant maps to a stable machine-readable category string via
/// [`Error::category`], which the CLI prints on failure.
#[derive(Debug)]
pub enum Error {
    /// Operands have incompatible shapes for the requested operation.
    ShapeMismatch { op: &'static str, detail: String },
    /// A reduction or softmax axis is out of range for the tensor rank.
    InvalidAxis { axis: usize, rank: usize },
    /// `backward` was called on a non-scalar value.
    NonScalarLoss { len: usize },
    /// A pooling or interpolation target extent is invalid.
    InvalidTarget { detail: String },
    /// Backbone input extents are not divisible by 2^n.
    IndivisibleInput { h: usize, w: usize, blocks: usize },
    /// An operation over a collection received no elements.
    EmptyInput { what: &'static str },
    /// Region count L below the minimum of 2.
    InvalidL { l: usize },
    /// A region indicator contains no pixels.
    EmptyRegion { region: usize },
    /// Text input to the encoder is empty.
    EmptyText,
    /// A provider response does not match the expected answer template.
    UnparseableResponse { detail: String },
    /// HTTP transport failure talking to a remote provider.
    TransportError { detail: String },
    /// The remote provider rejected the configured credential.
    AuthError { detail: String },
    /// Resampled representation rows do not match the attention grid.
    TargetMismatch { expected: usize, got: usize },
    /// Prediction/target lists differ in length.
    LengthMismatch { left: usize, right: usize },
    /// A loss was requested over an empty batch.
    EmptyBatch,
    /// Score normalization over a constant list.
    DegenerateRange,
    /// Correlation over a constant (zero-variance) list.
    DegenerateVariance { side: &'static str },
    /// Predictions and labels do not cover the same image ids.
    IdMismatch { id: String },
    /// Underlying filesystem failure.
    IoError { path: String, detail: String },
    /// A mask file or its sidecar failed validation.
    CorruptMaskFile { path: String, detail: String },
    /// A checkpoint file failed validation.
    CorruptCheckpoint { detail: String },
    /// A dataset CSV line is malformed.
    MalformedCsv { line: usize, detail: String },
    /// A dataset row points at a file that does not exist.
    MissingImage { path: String },
    /// Not enough records to form the requested splits.
    TooFewSamples { have: usize, need: usize },
    /// Training hit a NaN/Inf loss.
    NonFiniteLoss { batch: usize },
    /// The ablation harness received an empty toggle grid.
    InvalidGrid,
    /// A configuration value is out of its documented range.
    InvalidConfig { detail: String },
}

impl Error {
    /// Stable category name, one token, suitable for machine parsing.
    pub fn category(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::InvalidAxis { .. } => "InvalidAxis",
            Error::NonScalarLoss { .. } => "NonScalarLoss",
            Error::InvalidTarget { .. } => "InvalidTarget",
            Error::IndivisibleInput { .. } => "IndivisibleInput",
            Error::EmptyInput { .. } => "EmptyInput",
            Error::InvalidL { .. } => "InvalidL",
            Error::EmptyRegion { .. } => "EmptyRegion",
            Error::EmptyText => "EmptyText",
            Error::UnparseableResponse { .. } => "UnparseableResponse",
            Error::TransportError { .. } => "TransportError",
            Error::AuthError { .. } => "AuthError",
            Error::TargetMismatch { .. } => "TargetMismatch",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::EmptyBatch => "EmptyBatch",
            Error::DegenerateRange => "DegenerateRange",
            Error::DegenerateVariance { .. } => "DegenerateVariance",
            Error::IdMismatch { .. } => "IdMismatch",
            Error::IoError { .. } => "IoError",
            Error::CorruptMaskFile { .. } => "CorruptMaskFile",
            Error::CorruptCheckpoint { .. } => "CorruptCheckpoint",
            Error::MalformedCsv { .. } => "MalformedCsv",
            Error::MissingImage { .. } => "MissingImage",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::InvalidGrid => "InvalidGrid",
            Error::InvalidConfig { .. } => "InvalidConfig",
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, detail } => write!(f, "shape mismatch in {op}: {detail}"),
            Error::InvalidAxis { axis, rank } => {
                write!(f, "axis {axis} out of range for rank {rank}")
            }
            Error::NonScalarLoss { len } => {
                write!(f, "backward requires a scalar loss, got {len} elements")
            }
            Error::InvalidTarget { detail } => write!(f, "invalid target extents: {detail}"),
            Error::IndivisibleInput { h, w, blocks } => {
                write!(f, "{h}x{w} input not divisible by 2^{blocks}")
            }
            Error::EmptyInput { what } => write!(f, "empty input: {what}"),
            Error::InvalidL { l } => write!(f, "region count L must be >= 2, got {l}"),
            Error::EmptyRegion { region } => write!(f, "region {region} has no pixels"),
            Error::EmptyText => write!(f, "text input is empty"),
            Error::UnparseableResponse { detail } => {
                write!(f, "unparseable provider response: {detail}")
            }
            Error::TransportError { detail } => write!(f, "transport error: {detail}"),
            Error::AuthError { detail } => write!(f, "authentication failed: {detail}"),
            Error::TargetMismatch { expected, got } => {
                write!(f, "resample target rows {got} != attention grid {expected}")
            }
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::EmptyBatch => write!(f, "empty batch"),
            Error::DegenerateRange => write!(f, "all values equal; range is degenerate"),
            Error::DegenerateVariance { side } => {
                write!(f, "{side} list is constant; correlation undefined")
            }
            Error::IdMismatch { id } => write!(f, "id {id:?} missing from the other file"),
            Error::IoError { path, detail } => write!(f, "io error on {path}: {detail}"),
            Error::CorruptMaskFile { path, detail } => {
                write!(f, "corrupt mask file {path}: {detail}")
            }
            Error::CorruptCheckpoint { detail } => write!(f, "corrupt checkpoint: {detail}"),
            Error::MalformedCsv { line, detail } => {
                write!(f, "malformed csv at line {line}: {detail}")
            }
            Error::MissingImage { path } => write!(f, "image file not found: {path}"),
            Error::TooFewSamples { have, need } => {
                write!(f, "need at least {need} records, have {have}")
            }
            Error::NonFiniteLoss { batch } => {
                write!(f, "non-finite loss in batch {batch}")
            }
            Error::InvalidGrid => write!(f, "ablation grid is empty"),
            Error::InvalidConfig { detail } => write!(f, "invalid config: {detail}"),
        }
    }
}

impl std::error::Error for Error {}

impl Error {
    pub fn io(path: impl Into<String>, err: std::io::Error) -> Self {
        Error::IoError {
            path: path.into(),
            detail: err.to_string(),
        }
    }
}
