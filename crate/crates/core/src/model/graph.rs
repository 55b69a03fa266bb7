use serde::{Deserialize, Serialize};

use super::layout::{decode_stimulation, EncoderOutputLayout, StimulationPattern};
use super::ModelError;
use crate::image::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// Shape of a stride-1 2-D convolution over a channel-major `(c, h, w)` volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: [usize; 2],
    #[serde(default)]
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding + 1).saturating_sub(self.kernel[0])
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding + 1).saturating_sub(self.kernel[1])
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        vec![self.out_channels, self.in_channels, self.kernel[0], self.kernel[1]]
    }
}

/// One layer of an encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    /// `weight` is `[outputs, inputs]` row-major.
    Dense {
        inputs: usize,
        outputs: usize,
        weight: Vec<f32>,
        bias: Vec<f32>,
    },
    /// `weight` is `[out_c, in_c, kh, kw]` row-major (cross-correlation).
    Conv2d {
        geometry: ConvGeometry,
        weight: Vec<f32>,
        bias: Vec<f32>,
    },
    Activation(Activation),
    /// `clamp(scale * x + offset, lo, hi)` element-wise.
    ScaleClamp {
        scale: f32,
        offset: f32,
        lo: f32,
        hi: f32,
    },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Activation(Activation::Relu) => "relu",
            LayerSpec::Activation(Activation::Sigmoid) => "sigmoid",
            LayerSpec::Activation(Activation::Tanh) => "tanh",
            LayerSpec::ScaleClamp { .. } => "scale_clamp",
        }
    }

    /// Output size given the incoming size, after checking compatibility.
    fn output_len(&self, index: usize, input_len: usize) -> Result<usize, ModelError> {
        let mismatch = |expected| ModelError::ShapeMismatch {
            layer: index,
            expected,
            actual: input_len,
        };
        let invalid = |reason: String| ModelError::InvalidLayer { layer: index, reason };
        match self {
            LayerSpec::Dense {
                inputs,
                outputs,
                weight,
                bias,
            } => {
                if *inputs != input_len {
                    return Err(mismatch(*inputs));
                }
                if *outputs == 0 {
                    return Err(invalid("dense layer with zero outputs".into()));
                }
                if weight.len() != inputs * outputs || bias.len() != *outputs {
                    return Err(invalid(format!(
                        "dense {inputs}->{outputs} needs {} weights and {outputs} biases, got {} and {}",
                        inputs * outputs,
                        weight.len(),
                        bias.len()
                    )));
                }
                Ok(*outputs)
            }
            LayerSpec::Conv2d { geometry, weight, bias } => {
                if geometry.input_len() != input_len {
                    return Err(mismatch(geometry.input_len()));
                }
                if geometry.kernel.contains(&0) || geometry.out_channels == 0 || geometry.output_len() == 0 {
                    return Err(invalid(format!("degenerate convolution {geometry:?}")));
                }
                let expected: usize = geometry.weight_shape().iter().product();
                if weight.len() != expected || bias.len() != geometry.out_channels {
                    return Err(invalid(format!(
                        "conv2d needs {expected} weights and {} biases, got {} and {}",
                        geometry.out_channels,
                        weight.len(),
                        bias.len()
                    )));
                }
                Ok(geometry.output_len())
            }
            LayerSpec::Activation(_) => Ok(input_len),
            LayerSpec::ScaleClamp { scale, offset, lo, hi } => {
                if !(lo <= hi) {
                    return Err(invalid(format!("scale_clamp requires lo <= hi, got {lo} > {hi}")));
                }
                if !scale.is_finite() || !offset.is_finite() {
                    return Err(invalid("scale_clamp scale and offset must be finite".into()));
                }
                Ok(input_len)
            }
        }
    }

    fn apply(&self, input: &[f32], out: &mut Vec<f32>) {
        out.clear();
        match self {
            LayerSpec::Dense {
                inputs,
                outputs,
                weight,
                bias,
            } => {
                out.extend((0..*outputs).map(|o| {
                    let row = &weight[o * inputs..(o + 1) * inputs];
                    let acc: f64 = row.iter().zip(input).map(|(&w, &x)| w as f64 * x as f64).sum();
                    (acc + bias[o] as f64) as f32
                }));
            }
            LayerSpec::Conv2d {
                geometry: g,
                weight,
                bias,
            } => {
                let (oh, ow) = (g.out_height(), g.out_width());
                let [kh, kw] = g.kernel;
                let pad = g.padding as isize;
                out.resize(g.output_len(), 0.0);
                for co in 0..g.out_channels {
                    for y in 0..oh {
                        for x in 0..ow {
                            let mut acc = bias[co] as f64;
                            for ci in 0..g.in_channels {
                                let plane = &input[ci * g.height * g.width..(ci + 1) * g.height * g.width];
                                let kbase = ((co * g.in_channels + ci) * kh) * kw;
                                for ky in 0..kh {
                                    let sy = y as isize + ky as isize - pad;
                                    if sy < 0 || sy >= g.height as isize {
                                        continue;
                                    }
                                    for kx in 0..kw {
                                        let sx = x as isize + kx as isize - pad;
                                        if sx < 0 || sx >= g.width as isize {
                                            continue;
                                        }
                                        let w = weight[kbase + ky * kw + kx];
                                        acc += w as f64 * plane[sy as usize * g.width + sx as usize] as f64;
                                    }
                                }
                            }
                            out[(co * oh + y) * ow + x] = acc as f32;
                        }
                    }
                }
            }
            LayerSpec::Activation(a) => out.extend(input.iter().map(|&x| a.apply(x))),
            LayerSpec::ScaleClamp { scale, offset, lo, hi } => {
                out.extend(input.iter().map(|&x| (scale * x + offset).clamp(*lo, *hi)))
            }
        }
    }
}

/// Post-layer values for every layer of one forward pass.
///
/// Neuron `(layer, offset)` is `layers[layer][offset]`; the indexing is
/// stable across runs of the same model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationTrace {
    pub layers: Vec<Vec<f32>>,
}

impl ActivationTrace {
    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// All neuron values in `(layer, offset)` order.
    pub fn flat(&self) -> impl Iterator<Item = f32> + '_ {
        self.layers.iter().flatten().copied()
    }
}

/// A validated, immutable encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    input_shape: (usize, usize),
    layers: Vec<LayerSpec>,
    layout: EncoderOutputLayout,
    layer_sizes: Vec<usize>,
    metadata: Option<serde_json::Value>,
}

impl ModelGraph {
    pub fn new(
        input_shape: (usize, usize),
        layers: Vec<LayerSpec>,
        layout: EncoderOutputLayout,
        metadata: Option<serde_json::Value>,
    ) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::EmptyModel);
        }
        if input_shape.0 == 0 || input_shape.1 == 0 {
            return Err(ModelError::InvalidInputShape(input_shape));
        }
        layout.validate()?;
        let mut size = input_shape.0 * input_shape.1;
        let mut layer_sizes = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            size = layer.output_len(i, size)?;
            layer_sizes.push(size);
        }
        if size != layout.raw_len() {
            return Err(ModelError::ShapeMismatch {
                layer: layers.len() - 1,
                expected: layout.raw_len(),
                actual: size,
            });
        }
        Ok(Self {
            input_shape,
            layers,
            layout,
            layer_sizes,
            metadata,
        })
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layout(&self) -> &EncoderOutputLayout {
        &self.layout
    }

    pub fn metadata(&self) -> Option<&serde_json::Value> {
        self.metadata.as_ref()
    }

    /// Output size of each layer.
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn neuron_count(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    pub fn output_len(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    /// Evaluates the model on an image, optionally capturing every layer's output.
    pub fn forward(&self, image: &ImageTensor, trace: bool) -> Result<(Vec<f32>, Option<ActivationTrace>), ModelError> {
        if image.shape() != self.input_shape {
            return Err(ModelError::InputShape {
                expected: self.input_shape,
                actual: image.shape(),
            });
        }
        self.forward_values(image.pixels(), trace)
    }

    /// Same as [`forward`](Self::forward) on an already-flattened input.
    pub fn forward_values(
        &self,
        input: &[f32],
        trace: bool,
    ) -> Result<(Vec<f32>, Option<ActivationTrace>), ModelError> {
        let expected = self.input_shape.0 * self.input_shape.1;
        if input.len() != expected {
            return Err(ModelError::InputLength {
                expected,
                actual: input.len(),
            });
        }
        let mut current = input.to_vec();
        let mut next = Vec::new();
        let mut recorded = trace.then(|| Vec::with_capacity(self.layers.len()));
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&current, &mut next);
            if let Some(index) = next.iter().position(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite { layer: i, index });
            }
            std::mem::swap(&mut current, &mut next);
            if let Some(t) = recorded.as_mut() {
                t.push(current.clone());
            }
        }
        Ok((current, recorded.map(|layers| ActivationTrace { layers })))
    }

    /// Forward pass followed by [`decode_stimulation`].
    pub fn stimulate(&self, image: &ImageTensor) -> Result<StimulationPattern, ModelError> {
        let (raw, _) = self.forward(image, false)?;
        decode_stimulation(&raw, &self.layout)
    }
}
