//! Encoder runtime: NEF loading, forward evaluation, and output decoding.

mod graph;
mod layout;
mod nef;

use std::path::Path;

pub use graph::{Activation, ActivationTrace, ConvGeometry, LayerSpec, ModelGraph};
pub use layout::{decode_stimulation, EncoderOutputLayout, OutputOrdering, StimulationPattern};
pub use nef::{load_model, write_model, MAGIC};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("not a NEF container (bad magic)")]
    BadMagic,
    #[error("container truncated: {0}")]
    Truncated(String),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("tensor blob is {actual} bytes, header requires {expected}")]
    BlobLength { expected: usize, actual: usize },
    #[error("layer {layer}: unknown layer kind {kind:?}")]
    UnknownLayerKind { layer: usize, kind: String },
    #[error("layer {layer}: tensor table mismatch: {reason}")]
    TensorMismatch { layer: usize, reason: String },
    #[error("layer {layer}: expects input size {expected}, previous stage produces {actual}")]
    ShapeMismatch {
        layer: usize,
        expected: usize,
        actual: usize,
    },
    #[error("layer {layer}: {reason}")]
    InvalidLayer { layer: usize, reason: String },
    #[error("model has no layers")]
    EmptyModel,
    #[error("invalid input shape {0:?}")]
    InvalidInputShape((usize, usize)),
    #[error("invalid output layout: {0}")]
    Layout(String),
    #[error("image shape {actual:?} does not match model input {expected:?}")]
    InputShape {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("input has {actual} values, model expects {expected}")]
    InputLength { expected: usize, actual: usize },
    #[error("layer {layer}: non-finite value at output index {index}")]
    NonFinite { layer: usize, index: usize },
    #[error("raw output has {actual} values, layout expects {expected}")]
    OutputLength { expected: usize, actual: usize },
    #[error("raw output index {index} is not finite")]
    NonFiniteOutput { index: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Reads and validates a NEF file from disk.
pub fn load_model_file(path: &Path) -> Result<ModelGraph, ModelError> {
    let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_model(&bytes)
}
