use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest {}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },

    #[error("layer {layer}: blob {file} holds {actual} bytes, expected {expected}")]
    BlobLength {
        layer: usize,
        file: String,
        expected: usize,
        actual: usize,
    },

    #[error("layer {layer} output shape {output:?} does not match layer {next} input shape {input:?}")]
    ShapeChain {
        layer: usize,
        next: usize,
        output: Vec<usize>,
        input: Vec<usize>,
    },

    #[error("model failed validation:\n{}", format_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("layer {layer}: input shape {actual:?} does not match expected {expected:?}")]
    ShapeMismatch {
        layer: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("layer {layer}: input quantization {actual:?} does not match expected {expected:?}")]
    QuantMismatch {
        layer: usize,
        expected: crate::model::QuantParams,
        actual: crate::model::QuantParams,
    },

    #[error("layer {layer}: worst-case accumulator {bound} does not fit in int32")]
    AccumulatorOverflow { layer: usize, bound: i64 },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported {what} version {found}")]
    Version { what: &'static str, found: u16 },

    #[error("truncated {what}: {detail}")]
    Truncated { what: &'static str, detail: String },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("sample {index}: label {label} outside [0, {num_classes})")]
    LabelOutOfRange {
        index: usize,
        label: u8,
        num_classes: usize,
    },

    #[error("no significance data for conv layer {0}")]
    MissingSignificance(usize),

    #[error("multiplier ratio {0} cannot be represented (need 2^-32 <= ratio < 1)")]
    RatioOutOfRange(f64),

    #[error("invalid symbol prefix {0:?}")]
    InvalidPrefix(String),

    #[error("duplicate emitted symbol {0:?}")]
    SymbolCollision(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Re-attributes a per-layer error to model layer `idx`.
    pub(crate) fn at_layer(self, idx: usize) -> Self {
        match self {
            Error::ShapeMismatch { expected, actual, .. } => Error::ShapeMismatch {
                layer: idx,
                expected,
                actual,
            },
            Error::QuantMismatch { expected, actual, .. } => Error::QuantMismatch {
                layer: idx,
                expected,
                actual,
            },
            Error::AccumulatorOverflow { bound, .. } => Error::AccumulatorOverflow { layer: idx, bound },
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}
