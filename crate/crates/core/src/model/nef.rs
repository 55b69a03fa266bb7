//! The NEF container.
//!
//! ```text
//! "NEF1" | header_len: u32 LE | header: UTF-8 JSON | tensors: f32 LE, row-major
//! ```
//!
//! The header lists the layers, the tensors in blob order, the output layout
//! and optional metadata. Each dense or conv2d layer owns exactly two
//! tensors, `weight` then `bias`.

use serde::{Deserialize, Serialize};

use super::graph::{Activation, ConvGeometry, LayerSpec, ModelGraph};
use super::layout::EncoderOutputLayout;
use super::ModelError;

pub const MAGIC: &[u8; 4] = b"NEF1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerHeader {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d(ConvGeometry),
    Relu,
    Sigmoid,
    Tanh,
    ScaleClamp {
        #[serde(default = "one")]
        scale: f32,
        #[serde(default)]
        offset: f32,
        lo: f32,
        hi: f32,
    },
}

fn one() -> f32 {
    1.0
}

const KNOWN_KINDS: [&str; 6] = ["dense", "conv2d", "relu", "sigmoid", "tanh", "scale_clamp"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TensorEntry {
    layer: usize,
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize)]
struct HeaderOut<'a> {
    input_shape: [usize; 2],
    layers: Vec<LayerHeader>,
    tensors: Vec<TensorEntry>,
    layout: &'a EncoderOutputLayout,
    #[serde(skip_serializing_if = "Option::is_none")]
    metadata: Option<&'a serde_json::Value>,
}

#[derive(Deserialize)]
struct HeaderIn {
    input_shape: [usize; 2],
    layers: Vec<serde_json::Value>,
    tensors: Vec<TensorEntry>,
    layout: EncoderOutputLayout,
    #[serde(default)]
    metadata: Option<serde_json::Value>,
}

fn expected_tensors(index: usize, header: &LayerHeader) -> Vec<TensorEntry> {
    let entry = |name: &str, shape: Vec<usize>| TensorEntry {
        layer: index,
        name: name.to_string(),
        shape,
    };
    match header {
        LayerHeader::Dense { inputs, outputs } => {
            vec![entry("weight", vec![*outputs, *inputs]), entry("bias", vec![*outputs])]
        }
        LayerHeader::Conv2d(g) => vec![entry("weight", g.weight_shape()), entry("bias", vec![g.out_channels])],
        _ => Vec::new(),
    }
}

/// Parses and validates a NEF container.
pub fn load_model(bytes: &[u8]) -> Result<ModelGraph, ModelError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(ModelError::BadMagic);
    }
    if bytes.len() < 8 {
        return Err(ModelError::Truncated("header length".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let header_end = 8usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| ModelError::Truncated(format!("header declares {header_len} bytes")))?;
    let header_text = std::str::from_utf8(&bytes[8..header_end])
        .map_err(|e| ModelError::Header(format!("header is not UTF-8: {e}")))?;
    let header: HeaderIn = serde_json::from_str(header_text).map_err(|e| ModelError::Header(e.to_string()))?;

    let mut layer_headers = Vec::with_capacity(header.layers.len());
    for (i, value) in header.layers.into_iter().enumerate() {
        let kind = value
            .get("kind")
            .and_then(|k| k.as_str())
            .map(str::to_string)
            .ok_or_else(|| ModelError::InvalidLayer {
                layer: i,
                reason: "missing \"kind\"".into(),
            })?;
        if !KNOWN_KINDS.contains(&kind.as_str()) {
            return Err(ModelError::UnknownLayerKind { layer: i, kind });
        }
        let parsed: LayerHeader = serde_json::from_value(value).map_err(|e| ModelError::InvalidLayer {
            layer: i,
            reason: e.to_string(),
        })?;
        layer_headers.push(parsed);
    }

    let expected: Vec<TensorEntry> = layer_headers
        .iter()
        .enumerate()
        .flat_map(|(i, h)| expected_tensors(i, h))
        .collect();
    if header.tensors.len() != expected.len() {
        return Err(ModelError::Header(format!(
            "header lists {} tensors, layers require {}",
            header.tensors.len(),
            expected.len()
        )));
    }
    for (got, want) in header.tensors.iter().zip(&expected) {
        if got != want {
            return Err(ModelError::TensorMismatch {
                layer: want.layer,
                reason: format!(
                    "expected {} {:?}, header has {} {:?} for layer {}",
                    want.name, want.shape, got.name, got.shape, got.layer
                ),
            });
        }
    }

    let blob = &bytes[header_end..];
    let total: usize = expected.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if blob.len() != total * 4 {
        return Err(ModelError::BlobLength {
            expected: total * 4,
            actual: blob.len(),
        });
    }
    let mut values = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| -> Vec<f32> { values.by_ref().take(n).collect() };

    let layers = layer_headers
        .into_iter()
        .map(|h| match h {
            LayerHeader::Dense { inputs, outputs } => LayerSpec::Dense {
                inputs,
                outputs,
                weight: take(inputs * outputs),
                bias: take(outputs),
            },
            LayerHeader::Conv2d(g) => LayerSpec::Conv2d {
                geometry: g,
                weight: take(g.weight_shape().iter().product()),
                bias: take(g.out_channels),
            },
            LayerHeader::Relu => LayerSpec::Activation(Activation::Relu),
            LayerHeader::Sigmoid => LayerSpec::Activation(Activation::Sigmoid),
            LayerHeader::Tanh => LayerSpec::Activation(Activation::Tanh),
            LayerHeader::ScaleClamp { scale, offset, lo, hi } => LayerSpec::ScaleClamp { scale, offset, lo, hi },
        })
        .collect();

    let [h, w] = header.input_shape;
    ModelGraph::new((h, w), layers, header.layout, header.metadata)
}

/// Serializes a model; the output is a pure function of the model.
pub fn write_model(model: &ModelGraph) -> Vec<u8> {
    let mut layers = Vec::new();
    let mut tensors = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        let header = match layer {
            LayerSpec::Dense { inputs, outputs, .. } => LayerHeader::Dense {
                inputs: *inputs,
                outputs: *outputs,
            },
            LayerSpec::Conv2d { geometry, .. } => LayerHeader::Conv2d(*geometry),
            LayerSpec::Activation(Activation::Relu) => LayerHeader::Relu,
            LayerSpec::Activation(Activation::Sigmoid) => LayerHeader::Sigmoid,
            LayerSpec::Activation(Activation::Tanh) => LayerHeader::Tanh,
            LayerSpec::ScaleClamp { scale, offset, lo, hi } => LayerHeader::ScaleClamp {
                scale: *scale,
                offset: *offset,
                lo: *lo,
                hi: *hi,
            },
        };
        tensors.extend(expected_tensors(i, &header));
        if let LayerSpec::Dense { weight, bias, .. } | LayerSpec::Conv2d { weight, bias, .. } = layer {
            for v in weight.iter().chain(bias) {
                blob.extend(v.to_le_bytes());
            }
        }
        layers.push(header);
    }
    let (h, w) = model.input_shape();
    let header = HeaderOut {
        input_shape: [h, w],
        layers,
        tensors,
        layout: model.layout(),
        metadata: model.metadata(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend((json.len() as u32).to_le_bytes());
    out.extend(json);
    out.extend(blob);
    out
}
