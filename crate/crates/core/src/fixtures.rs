//! Built-in encoders and images for tests, benchmarks and demos.
//!
//! The planted retinal encoder is analytically tractable. For each electrode
//! (one per pixel of a 15×15 input), with `m` the zero-padded 3×3 local mean
//! and `d = |x − m|` the local contrast:
//!
//! ```text
//! f = f0 + kf·d            (Hz)
//! p = p0 + kp·m            (ms)
//! a = clamp(A·(m − t), 0, hi)  (µA)
//! ```
//!
//! so amplitude, charge, total current and active count rise with brightness,
//! and frequency rises with contrast. The regularized twin lowers the output
//! clamp so that `p·a` can never exceed the retinal charge limit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use std::path::{Path, PathBuf};

use crate::image::ImageTensor;
use crate::model::{write_model, Activation, ConvGeometry, EncoderOutputLayout, LayerSpec, ModelGraph};

pub const RETINAL_SIDE: usize = 15;
pub const RETINAL_ELECTRODES: usize = RETINAL_SIDE * RETINAL_SIDE;
pub const CORTICAL_ELECTRODES: usize = 60;
/// Fixed stimulation of the amplitude-only cortical layout.
pub const CORTICAL_FREQUENCY_HZ: f64 = 300.0;
pub const CORTICAL_PULSE_MS: f64 = 0.17;

/// Coefficients of the planted retinal encoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedParams {
    pub f0: f32,
    pub kf: f32,
    pub p0: f32,
    pub kp: f32,
    pub amp_gain: f32,
    pub threshold: f32,
    /// Upper clamp on every output.
    pub clamp_hi: f32,
}

impl Default for PlantedParams {
    fn default() -> Self {
        Self {
            f0: 30.0,
            kf: 200.0,
            p0: 1.0,
            kp: 3.0,
            amp_gain: 500.0,
            threshold: 0.6,
            clamp_hi: 1000.0,
        }
    }
}

impl PlantedParams {
    /// Same encoder with amplitudes clamped at 150 µA, so `p·a ≤ 4·150 < 628` nC.
    pub fn regularized() -> Self {
        Self {
            clamp_hi: 150.0,
            ..Self::default()
        }
    }

    /// `(f, p, a)` of one electrode from its pixel and local mean, in f64.
    pub fn electrode(&self, pixel: f64, local_mean: f64) -> (f64, f64, f64) {
        let hi = self.clamp_hi as f64;
        let f = (self.f0 as f64 + self.kf as f64 * (pixel - local_mean).abs()).clamp(0.0, hi);
        let p = (self.p0 as f64 + self.kp as f64 * local_mean).clamp(0.0, hi);
        let a = (self.amp_gain as f64 * (local_mean - self.threshold as f64)).clamp(0.0, hi);
        (f, p, a)
    }
}

/// Zero-padded 3×3 mean of every pixel.
pub fn local_means(image: &ImageTensor) -> Vec<f64> {
    let (h, w) = image.shape();
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h as i64 {
        for c in 0..w as i64 {
            let mut sum = 0.0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 0 && rr < h as i64 && cc >= 0 && cc < w as i64 {
                        sum += image.get(rr as usize, cc as usize) as f64;
                    }
                }
            }
            out.push(sum / 9.0);
        }
    }
    out
}

/// The planted encoder.
pub fn planted_retinal(params: &PlantedParams) -> ModelGraph {
    let side = RETINAL_SIDE;
    let ninth = 1.0f32 / 9.0;
    let mut k0 = vec![0.0f32; 3 * 9];
    for i in 0..9 {
        k0[i] = ninth;
        k0[9 + i] = -ninth;
        k0[18 + i] = ninth;
    }
    // channel 1: x − m, channel 2: m − x
    k0[9 + 4] += 1.0;
    k0[18 + 4] -= 1.0;
    let conv0 = LayerSpec::Conv2d {
        geometry: ConvGeometry {
            in_channels: 1,
            out_channels: 3,
            height: side,
            width: side,
            kernel: [3, 3],
            padding: 1,
        },
        weight: k0,
        bias: vec![0.0; 3],
    };
    let p = params;
    // rows: f, p, a; columns: m, (x − m)+, (m − x)+
    let k1 = vec![
        0.0, p.kf, p.kf, //
        p.kp, 0.0, 0.0, //
        p.amp_gain, 0.0, 0.0,
    ];
    let conv1 = LayerSpec::Conv2d {
        geometry: ConvGeometry {
            in_channels: 3,
            out_channels: 3,
            height: side,
            width: side,
            kernel: [1, 1],
            padding: 0,
        },
        weight: k1,
        bias: vec![p.f0, p.p0, -p.amp_gain * p.threshold],
    };
    let layers = vec![
        conv0,
        LayerSpec::Activation(Activation::Relu),
        conv1,
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::ScaleClamp {
            scale: 1.0,
            offset: 0.0,
            lo: 0.0,
            hi: p.clamp_hi,
        },
    ];
    let metadata = serde_json::json!({
        "fixture": if p.clamp_hi < PlantedParams::default().clamp_hi { "planted-retinal-clamped" } else { "planted-retinal" },
        "map": "m = zero-padded 3x3 mean, d = |x - m|; f = f0 + kf*d; p = p0 + kp*m; a = amp_gain*(m - threshold); all clamped to [0, clamp_hi]",
        "params": p,
    });
    ModelGraph::new(
        (side, side),
        layers,
        EncoderOutputLayout::full(RETINAL_ELECTRODES),
        Some(metadata),
    )
    .expect("planted fixture is well formed")
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Small random retinal encoder: 3×3 conv, dense 225→675, clamp.
pub fn retinal_tiny(seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = RETINAL_SIDE;
    let n = RETINAL_ELECTRODES;
    let conv = LayerSpec::Conv2d {
        geometry: ConvGeometry {
            in_channels: 1,
            out_channels: 1,
            height: side,
            width: side,
            kernel: [3, 3],
            padding: 1,
        },
        weight: uniform(&mut rng, 9, 0.3),
        bias: vec![0.0],
    };
    // frequencies stay positive: bias 60 dominates |Σ w·x| ≤ 225·0.1·0.9
    let mut bias = vec![60.0f32; n];
    bias.extend(vec![1.0f32; n]);
    bias.extend(vec![0.0f32; n]);
    let dense = LayerSpec::Dense {
        inputs: n,
        outputs: 3 * n,
        weight: uniform(&mut rng, 3 * n * n, 0.1),
        bias,
    };
    let layers = vec![
        conv,
        dense,
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::ScaleClamp {
            scale: 1.0,
            offset: 0.0,
            lo: 0.0,
            hi: 300.0,
        },
    ];
    let metadata = serde_json::json!({ "fixture": "retinal-tiny", "seed": seed });
    ModelGraph::new((side, side), layers, EncoderOutputLayout::full(n), Some(metadata))
        .expect("retinal-tiny is well formed")
}

/// Small random cortical encoder: dense 225→60 amplitudes at fixed 300 Hz, 0.17 ms.
pub fn cortical_tiny(seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = RETINAL_ELECTRODES;
    let dense = LayerSpec::Dense {
        inputs: n,
        outputs: CORTICAL_ELECTRODES,
        weight: uniform(&mut rng, CORTICAL_ELECTRODES * n, 2.0),
        bias: vec![0.0; CORTICAL_ELECTRODES],
    };
    let layers = vec![
        dense,
        LayerSpec::Activation(Activation::Relu),
        LayerSpec::ScaleClamp {
            scale: 1.0,
            offset: 0.0,
            lo: 0.0,
            hi: 200.0,
        },
    ];
    let layout = EncoderOutputLayout::amplitude_only(CORTICAL_ELECTRODES, CORTICAL_FREQUENCY_HZ, CORTICAL_PULSE_MS);
    let metadata = serde_json::json!({ "fixture": "cortical-tiny", "seed": seed });
    ModelGraph::new((RETINAL_SIDE, RETINAL_SIDE), layers, layout, Some(metadata)).expect("cortical-tiny is well formed")
}

/// Encoder that never stimulates: 60 zero amplitudes at the cortical fixed values.
pub fn null_encoder() -> ModelGraph {
    let n = RETINAL_ELECTRODES;
    let layers = vec![LayerSpec::Dense {
        inputs: n,
        outputs: CORTICAL_ELECTRODES,
        weight: vec![0.0; CORTICAL_ELECTRODES * n],
        bias: vec![0.0; CORTICAL_ELECTRODES],
    }];
    let layout = EncoderOutputLayout::amplitude_only(CORTICAL_ELECTRODES, CORTICAL_FREQUENCY_HZ, CORTICAL_PULSE_MS);
    let metadata = serde_json::json!({ "fixture": "null" });
    ModelGraph::new((RETINAL_SIDE, RETINAL_SIDE), layers, layout, Some(metadata)).expect("null encoder is well formed")
}

/// Width of [`feature_net`] output.
pub const FEATURE_DIMS: usize = 256;

/// Random-projection feature extractor: dense 225→256, tanh.
///
/// Wider than the 200-row diversity subsets, so their Gram matrices can be
/// non-singular (8×8 pooling gives only 64 dimensions).
pub fn feature_net(seed: u64) -> ModelGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = RETINAL_ELECTRODES;
    let layers = vec![
        LayerSpec::Dense {
            inputs: n,
            outputs: FEATURE_DIMS,
            weight: uniform(&mut rng, FEATURE_DIMS * n, 0.2),
            bias: uniform(&mut rng, FEATURE_DIMS, 1.0),
        },
        LayerSpec::Activation(Activation::Tanh),
    ];
    // The layout is never decoded; the extractor reads the raw output.
    let layout = EncoderOutputLayout::amplitude_only(FEATURE_DIMS, 1.0, 0.1);
    let metadata = serde_json::json!({ "fixture": "feature-net", "seed": seed });
    ModelGraph::new((RETINAL_SIDE, RETINAL_SIDE), layers, layout, Some(metadata)).expect("feature-net is well formed")
}

fn image_from_fn(f: impl Fn(f64, f64) -> f64) -> ImageTensor {
    let side = RETINAL_SIDE;
    let pixels = (0..side * side)
        .map(|i| {
            let (r, c) = ((i / side) as f64, (i % side) as f64);
            f(r, c) as f32
        })
        .collect();
    ImageTensor::from_clamped(side, side, pixels)
}

/// Named 15×15 seed images. All but `bright` are safe on the planted encoder.
pub fn seed_images() -> Vec<(&'static str, ImageTensor)> {
    let last = (RETINAL_SIDE - 1) as f64;
    let center = last / 2.0;
    vec![
        ("gradient_h", image_from_fn(|_, c| 0.1 + 0.4 * c / last)),
        (
            "disk",
            image_from_fn(|r, c| {
                if (r - center).hypot(c - center) <= 4.0 {
                    0.5
                } else {
                    0.2
                }
            }),
        ),
        (
            "blocks",
            image_from_fn(|r, c| {
                if ((r / 5.0).floor() + (c / 5.0).floor()) as i64 % 2 == 0 {
                    0.15
                } else {
                    0.45
                }
            }),
        ),
        (
            "texture",
            image_from_fn(|r, c| 0.3 + 0.1 * (0.9 * r).sin() * (0.7 * c).cos()),
        ),
        (
            "bright",
            image_from_fn(|r, c| 0.85 + 0.05 * ((r + c) / (2.0 * last) - 0.5)),
        ),
        ("gradient_v", image_from_fn(|r, _| 0.2 + 0.4 * r / last)),
    ]
}

/// Profiling images: the seeds plus uniform-brightness, gradient and random
/// images spanning the input range.
pub fn profiling_images(count: usize, seed: u64) -> Vec<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<ImageTensor> = seed_images().into_iter().map(|(_, img)| img).collect();
    let mut i = 0;
    while out.len() < count {
        let img = match i % 3 {
            0 => {
                let level = rng.random_range(0.0..=1.0);
                ImageTensor::filled(RETINAL_SIDE, RETINAL_SIDE, level)
            }
            1 => {
                let (a, b) = (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
                image_from_fn(|r, c| a + (b - a) * (r + c) / (2.0 * (RETINAL_SIDE - 1) as f64))
            }
            _ => {
                let pixels = (0..RETINAL_ELECTRODES).map(|_| rng.random::<f32>()).collect();
                ImageTensor::from_clamped(RETINAL_SIDE, RETINAL_SIDE, pixels)
            }
        };
        out.push(img);
        i += 1;
    }
    out.truncate(count.max(1));
    out
}

/// Profiling images written by [`write_workspace`].
pub const PROFILING_COUNT: usize = 200;
pub const PROFILING_SEED: u64 = 42;

/// Config for a planted-retinal campaign inside a [`write_workspace`] directory.
pub fn campaign_toml(model: &str, strategy: &str, test_limit: u64, rng_seed: u64) -> String {
    format!(
        r#"name = "{strategy}"
rng_seed = {rng_seed}

[model]
path = "{model}"

[limits]
preset = "retinal"

[strategy]
kind = "{strategy}"
profiling_data = "profiling"

[mutation]
seeds = "seeds"
m = 10

[budget]
test_limit = {test_limit}
mode = "fixed"

[diversity]
extractor = "builtin:pool8"
"#
    )
}

/// Writes fixture models, seeds, profiling images and an example config into
/// `dir`; returns the files written.
pub fn write_workspace(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut put = |rel: &str, bytes: Vec<u8>| -> std::io::Result<()> {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, bytes)?;
        written.push(path);
        Ok(())
    };
    put(
        "planted-retinal.nef",
        write_model(&planted_retinal(&PlantedParams::default())),
    )?;
    put(
        "planted-retinal-clamped.nef",
        write_model(&planted_retinal(&PlantedParams::regularized())),
    )?;
    put("retinal-tiny.nef", write_model(&retinal_tiny(7)))?;
    put("cortical-tiny.nef", write_model(&cortical_tiny(7)))?;
    put("null-encoder.nef", write_model(&null_encoder()))?;
    put("feature-net.nef", write_model(&feature_net(11)))?;
    for (i, (name, img)) in seed_images().into_iter().enumerate() {
        put(&format!("seeds/{i:02}_{name}.f32"), img.to_f32_grid())?;
    }
    for (i, img) in profiling_images(PROFILING_COUNT, PROFILING_SEED).iter().enumerate() {
        put(&format!("profiling/p{i:03}.f32"), img.to_f32_grid())?;
    }
    put(
        "campaign.toml",
        campaign_toml("planted-retinal.nef", "VO-KMVP", 5000, 1).into_bytes(),
    )?;
    Ok(written)
}
