//! Image-level mutations.
//!
//! Affine kinds (translate, rotate, scale, shear) are inverse-mapped about the
//! image center `((W-1)/2, (H-1)/2)` with bilinear sampling and zero fill.
//! Every output is clamped to `[0, 1]`. Stochastic kinds (noise, pixel
//! perturbation) carry their own generator seed, so a [`MutationRecord`]
//! replays bit-exactly through [`apply_transform`].

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MutationError {
    #[error("{kind:?} parameter {param} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        kind: MutationKind,
        param: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("{0:?} is not enabled in this mutation config")]
    KindDisabled(MutationKind),
    #[error("no mutation kinds enabled")]
    NoKinds,
    #[error("invalid mutation range for {kind:?}: {reason}")]
    InvalidRange { kind: MutationKind, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    Translate,
    Rotate,
    Scale,
    Shear,
    Brightness,
    Contrast,
    Blur,
    Noise,
    PixelPerturb,
}

impl MutationKind {
    pub const ALL: [MutationKind; 9] = [
        MutationKind::Translate,
        MutationKind::Rotate,
        MutationKind::Scale,
        MutationKind::Shear,
        MutationKind::Brightness,
        MutationKind::Contrast,
        MutationKind::Blur,
        MutationKind::Noise,
        MutationKind::PixelPerturb,
    ];
}

/// A fully specified transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MutationParams {
    /// Shift as a fraction of width (`dx`) and height (`dy`).
    Translate {
        dx: f64,
        dy: f64,
    },
    /// Counter-clockwise rotation in degrees.
    Rotate {
        degrees: f64,
    },
    Scale {
        factor: f64,
    },
    /// Horizontal shear: a pixel at row offset `v` from center moves by `factor * v`.
    Shear {
        factor: f64,
    },
    Brightness {
        delta: f64,
    },
    /// Stretch about the image mean.
    Contrast {
        factor: f64,
    },
    Blur {
        sigma: f64,
    },
    Noise {
        sigma: f64,
        seed: u64,
    },
    /// Moves `max(1, ceil(fraction * pixels))` distinct pixels by `±magnitude`.
    PixelPerturb {
        fraction: f64,
        magnitude: f64,
        seed: u64,
    },
}

impl MutationParams {
    pub fn kind(&self) -> MutationKind {
        match self {
            MutationParams::Translate { .. } => MutationKind::Translate,
            MutationParams::Rotate { .. } => MutationKind::Rotate,
            MutationParams::Scale { .. } => MutationKind::Scale,
            MutationParams::Shear { .. } => MutationKind::Shear,
            MutationParams::Brightness { .. } => MutationKind::Brightness,
            MutationParams::Contrast { .. } => MutationKind::Contrast,
            MutationParams::Blur { .. } => MutationKind::Blur,
            MutationParams::Noise { .. } => MutationKind::Noise,
            MutationParams::PixelPerturb { .. } => MutationKind::PixelPerturb,
        }
    }
}

/// Lineage of one mutant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MutationRecord {
    pub params: MutationParams,
    pub parent_id: usize,
    /// Campaign-wide index of the draw that produced this mutant.
    pub draw_index: u64,
}

/// Inclusive `[lo, hi]`.
pub type Range = [f64; 2];

/// Per-kind parameter ranges and the set of enabled kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MutationConfig {
    pub kinds: Vec<MutationKind>,
    /// Max |shift| as a fraction of each dimension.
    pub translate: f64,
    /// Max |angle| in degrees.
    pub rotate_degrees: f64,
    pub scale: Range,
    pub shear: f64,
    pub brightness: f64,
    pub contrast: Range,
    pub blur_sigma: Range,
    pub noise_sigma: Range,
    /// Max fraction of pixels touched by pixel_perturb.
    pub perturb_fraction: f64,
    pub perturb_magnitude: f64,
}

impl Default for MutationConfig {
    fn default() -> Self {
        Self {
            kinds: MutationKind::ALL.to_vec(),
            translate: 0.1,
            rotate_degrees: 15.0,
            scale: [0.8, 1.2],
            shear: 0.15,
            brightness: 0.3,
            contrast: [0.7, 1.3],
            blur_sigma: [0.5, 1.5],
            noise_sigma: [0.02, 0.08],
            perturb_fraction: 0.01,
            perturb_magnitude: 0.2,
        }
    }
}

impl MutationConfig {
    /// Small-neighborhood perturbations used by the B-Local strategy.
    pub fn local() -> Self {
        Self {
            kinds: vec![MutationKind::Noise, MutationKind::PixelPerturb],
            noise_sigma: [0.005, 0.02],
            perturb_fraction: 0.05,
            perturb_magnitude: 0.05,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MutationError> {
        if self.kinds.is_empty() {
            return Err(MutationError::NoKinds);
        }
        let bad = |kind, reason: String| Err(MutationError::InvalidRange { kind, reason });
        for (kind, v) in [
            (MutationKind::Translate, self.translate),
            (MutationKind::Rotate, self.rotate_degrees),
            (MutationKind::Shear, self.shear),
            (MutationKind::Brightness, self.brightness),
            (MutationKind::PixelPerturb, self.perturb_magnitude),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(kind, format!("bound {v} must be finite and >= 0"));
            }
        }
        if !(self.perturb_fraction > 0.0 && self.perturb_fraction <= 1.0) {
            return bad(
                MutationKind::PixelPerturb,
                format!("fraction {} must be in (0, 1]", self.perturb_fraction),
            );
        }
        for (kind, [lo, hi], min) in [
            (MutationKind::Scale, self.scale, f64::MIN_POSITIVE),
            (MutationKind::Contrast, self.contrast, 0.0),
            (MutationKind::Blur, self.blur_sigma, f64::MIN_POSITIVE),
            (MutationKind::Noise, self.noise_sigma, 0.0),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= min) {
                return bad(kind, format!("range [{lo}, {hi}] is empty or out of domain"));
            }
        }
        Ok(())
    }

    fn check_params(&self, params: &MutationParams) -> Result<(), MutationError> {
        let kind = params.kind();
        if !self.kinds.contains(&kind) {
            return Err(MutationError::KindDisabled(kind));
        }
        let within = |param: &'static str, value: f64, lo: f64, hi: f64| {
            if value.is_finite() && value >= lo && value <= hi {
                Ok(())
            } else {
                Err(MutationError::OutOfRange {
                    kind,
                    param,
                    value,
                    lo,
                    hi,
                })
            }
        };
        let sym = |param, value, bound: f64| within(param, value, -bound, bound);
        match *params {
            MutationParams::Translate { dx, dy } => {
                sym("dx", dx, self.translate)?;
                sym("dy", dy, self.translate)
            }
            MutationParams::Rotate { degrees } => sym("degrees", degrees, self.rotate_degrees),
            MutationParams::Scale { factor } => within("factor", factor, self.scale[0], self.scale[1]),
            MutationParams::Shear { factor } => sym("factor", factor, self.shear),
            MutationParams::Brightness { delta } => sym("delta", delta, self.brightness),
            MutationParams::Contrast { factor } => within("factor", factor, self.contrast[0], self.contrast[1]),
            MutationParams::Blur { sigma } => within("sigma", sigma, self.blur_sigma[0], self.blur_sigma[1]),
            MutationParams::Noise { sigma, .. } => within("sigma", sigma, self.noise_sigma[0], self.noise_sigma[1]),
            MutationParams::PixelPerturb {
                fraction, magnitude, ..
            } => {
                within("fraction", fraction, 0.0, self.perturb_fraction)?;
                within("magnitude", magnitude, 0.0, self.perturb_magnitude)
            }
        }
    }

    /// Draws a parameter set for `kind` uniformly from its range.
    pub fn draw_params<R: Rng + ?Sized>(&self, kind: MutationKind, rng: &mut R) -> MutationParams {
        let mut uniform = |lo: f64, hi: f64| if lo < hi { rng.random_range(lo..=hi) } else { lo };
        match kind {
            MutationKind::Translate => {
                let dx = uniform(-self.translate, self.translate);
                let dy = uniform(-self.translate, self.translate);
                MutationParams::Translate { dx, dy }
            }
            MutationKind::Rotate => MutationParams::Rotate {
                degrees: uniform(-self.rotate_degrees, self.rotate_degrees),
            },
            MutationKind::Scale => MutationParams::Scale {
                factor: uniform(self.scale[0], self.scale[1]),
            },
            MutationKind::Shear => MutationParams::Shear {
                factor: uniform(-self.shear, self.shear),
            },
            MutationKind::Brightness => MutationParams::Brightness {
                delta: uniform(-self.brightness, self.brightness),
            },
            MutationKind::Contrast => MutationParams::Contrast {
                factor: uniform(self.contrast[0], self.contrast[1]),
            },
            MutationKind::Blur => MutationParams::Blur {
                sigma: uniform(self.blur_sigma[0], self.blur_sigma[1]),
            },
            MutationKind::Noise => {
                let sigma = uniform(self.noise_sigma[0], self.noise_sigma[1]);
                MutationParams::Noise {
                    sigma,
                    seed: rng.random(),
                }
            }
            MutationKind::PixelPerturb => {
                let fraction = uniform(0.0, self.perturb_fraction);
                MutationParams::PixelPerturb {
                    fraction,
                    magnitude: self.perturb_magnitude,
                    seed: rng.random(),
                }
            }
        }
    }
}

/// Picks a kind uniformly over the enabled kinds, draws its parameters and applies it.
pub fn random_mutation<R: Rng + ?Sized>(
    image: &ImageTensor,
    rng: &mut R,
    config: &MutationConfig,
    parent_id: usize,
    draw_index: u64,
) -> Result<(ImageTensor, MutationRecord), MutationError> {
    if config.kinds.is_empty() {
        return Err(MutationError::NoKinds);
    }
    let kind = config.kinds[rng.random_range(0..config.kinds.len())];
    let params = config.draw_params(kind, rng);
    let out = apply_transform(&params, image, config)?;
    Ok((
        out,
        MutationRecord {
            params,
            parent_id,
            draw_index,
        },
    ))
}

/// Applies a transform after checking its parameters against `config`.
pub fn apply_transform(
    params: &MutationParams,
    image: &ImageTensor,
    config: &MutationConfig,
) -> Result<ImageTensor, MutationError> {
    config.check_params(params)?;
    Ok(apply_unchecked(params, image))
}

/// Applies a transform without range checks.
pub fn apply_unchecked(params: &MutationParams, image: &ImageTensor) -> ImageTensor {
    let (h, w) = (image.height(), image.width());
    let px = image.pixels();
    let out: Vec<f32> = match *params {
        MutationParams::Translate { dx, dy } => {
            let (tx, ty) = (dx * w as f64, dy * h as f64);
            warp(image, |u, v| (u - tx, v - ty))
        }
        MutationParams::Rotate { degrees } => {
            let (s, c) = degrees.to_radians().sin_cos();
            // Rows grow downward, so a visually counter-clockwise turn samples
            // the source at R(θ)·(u, v).
            warp(image, |u, v| (c * u - s * v, s * u + c * v))
        }
        MutationParams::Scale { factor } => warp(image, |u, v| (u / factor, v / factor)),
        MutationParams::Shear { factor } => warp(image, |u, v| (u - factor * v, v)),
        MutationParams::Brightness { delta } => px.iter().map(|&p| (p as f64 + delta) as f32).collect(),
        MutationParams::Contrast { factor } => {
            let mean = image.mean();
            px.iter().map(|&p| (mean + factor * (p as f64 - mean)) as f32).collect()
        }
        MutationParams::Blur { sigma } => gaussian_blur(px, h, w, sigma),
        MutationParams::Noise { sigma, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            match Normal::new(0.0, sigma) {
                Ok(normal) => px
                    .iter()
                    .map(|&p| (p as f64 + normal.sample(&mut rng)) as f32)
                    .collect(),
                Err(_) => px.to_vec(),
            }
        }
        MutationParams::PixelPerturb {
            fraction,
            magnitude,
            seed,
        } => {
            let n = px.len();
            let count = ((fraction * n as f64).ceil() as usize).clamp(1, n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = px.to_vec();
            for i in sample(&mut rng, n, count) {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                out[i] = (out[i] as f64 + sign * magnitude) as f32;
            }
            out
        }
    };
    ImageTensor::from_clamped(h, w, out)
}

/// Snaps coordinates that are integral up to rounding noise, so exact
/// rotations by multiples of 90° and zero shifts reproduce pixels exactly.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x
    }
}

/// Inverse warp: `source(u, v)` maps an output offset from the center to a
/// source offset from the center.
fn warp(image: &ImageTensor, source: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f32> {
    let (h, w) = (image.height(), image.width());
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let (su, sv) = source(col as f64 - cx, row as f64 - cy);
            out.push(bilinear(image, snap(su + cx), snap(sv + cy)));
        }
    }
    out
}

fn bilinear(image: &ImageTensor, x: f64, y: f64) -> f32 {
    let (h, w) = (image.height() as i64, image.width() as i64);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut acc = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let weight = wx * wy;
            let (r, c) = (y0 + dy, x0 + dx);
            if weight > 0.0 && r >= 0 && r < h && c >= 0 && c < w {
                acc += weight * image.get(r as usize, c as usize) as f64;
            }
        }
    }
    acc as f32
}

/// Separable Gaussian blur, radius `ceil(3σ)`, replicated edges.
fn gaussian_blur(px: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0f64; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * px[r * w + clamp(c as i64 + k as i64 - radius, w)] as f64)
                .sum();
        }
    }
    let mut out = vec![0.0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, wt)| wt * tmp[clamp(r as i64 + k as i64 - radius, h) * w + c])
                .sum::<f64>() as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize) -> ImageTensor {
        ImageTensor::new(h, w, (0..h * w).map(|i| i as f32 / (h * w) as f32).collect()).unwrap()
    }

    #[test]
    fn zero_translation_is_identity() {
        let img = grid(7, 5);
        let out = apply_transform(
            &MutationParams::Translate { dx: 0.0, dy: 0.0 },
            &img,
            &MutationConfig::default(),
        )
        .unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn brightness_clamps() {
        let img = ImageTensor::new(1, 2, vec![0.9, 0.1]).unwrap();
        let out = apply_transform(
            &MutationParams::Brightness { delta: 0.3 },
            &img,
            &MutationConfig::default(),
        )
        .unwrap();
        assert_eq!(out.pixels()[0], 1.0);
        assert!((out.pixels()[1] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn quarter_turn_on_labelled_grid() {
        let (a, b, c, d) = (0.1, 0.2, 0.3, 0.4);
        let img = ImageTensor::new(2, 2, vec![a, b, c, d]).unwrap();
        let config = MutationConfig {
            rotate_degrees: 90.0,
            ..MutationConfig::default()
        };
        let out = apply_transform(&MutationParams::Rotate { degrees: 90.0 }, &img, &config).unwrap();
        assert_eq!(out.pixels(), &[b, d, a, c]);
    }

    #[test]
    fn translation_shifts_and_zero_fills() {
        let img = ImageTensor::new(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let config = MutationConfig {
            translate: 0.5,
            ..MutationConfig::default()
        };
        let out = apply_transform(&MutationParams::Translate { dx: 0.25, dy: 0.0 }, &img, &config).unwrap();
        assert_eq!(out.pixels(), &[0.0, 0.1, 0.2, 0.3]);
    }

    #[test]
    fn contrast_is_mean_centered() {
        let img = ImageTensor::new(1, 2, vec![0.4, 0.6]).unwrap();
        let out = apply_transform(
            &MutationParams::Contrast { factor: 1.3 },
            &img,
            &MutationConfig::default(),
        )
        .unwrap();
        assert!((out.pixels()[0] - 0.37).abs() < 1e-6);
        assert!((out.pixels()[1] - 0.63).abs() < 1e-6);
    }

    #[test]
    fn blur_preserves_constant_image() {
        let img = ImageTensor::filled(6, 6, 0.42);
        let out = apply_transform(&MutationParams::Blur { sigma: 1.5 }, &img, &MutationConfig::default()).unwrap();
        assert!(out.pixels().iter().all(|&p| (p - 0.42).abs() < 1e-6));
    }

    #[test]
    fn pixel_perturb_touches_rounded_fraction() {
        let img = ImageTensor::filled(10, 10, 0.5);
        let params = MutationParams::PixelPerturb {
            fraction: 0.01,
            magnitude: 0.2,
            seed: 3,
        };
        let out = apply_transform(&params, &img, &MutationConfig::default()).unwrap();
        let changed: Vec<f32> = out.pixels().iter().copied().filter(|&p| p != 0.5).collect();
        assert_eq!(changed.len(), 1);
        assert!((changed[0] - 0.7).abs() < 1e-6 || (changed[0] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let img = grid(3, 3);
        let err = apply_transform(
            &MutationParams::Rotate { degrees: 40.0 },
            &img,
            &MutationConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, MutationError::OutOfRange { param: "degrees", .. }));
        let err =
            apply_transform(&MutationParams::Scale { factor: 2.0 }, &img, &MutationConfig::default()).unwrap_err();
        assert!(matches!(err, MutationError::OutOfRange { .. }));
        let err =
            apply_transform(&MutationParams::Rotate { degrees: 1.0 }, &img, &MutationConfig::local()).unwrap_err();
        assert_eq!(err, MutationError::KindDisabled(MutationKind::Rotate));
    }

    #[test]
    fn empty_kind_set_is_an_error() {
        let config = MutationConfig {
            kinds: vec![],
            ..MutationConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            random_mutation(&grid(2, 2), &mut rng, &config, 0, 0).unwrap_err(),
            MutationError::NoKinds
        );
    }

    #[test]
    fn seeded_mutation_is_reproducible_and_replays() {
        let img = grid(8, 8);
        let config = MutationConfig::default();
        for draw in 0..50 {
            let mut r1 = ChaCha8Rng::seed_from_u64(7 + draw);
            let mut r2 = ChaCha8Rng::seed_from_u64(7 + draw);
            let (a, rec_a) = random_mutation(&img, &mut r1, &config, 2, draw).unwrap();
            let (b, rec_b) = random_mutation(&img, &mut r2, &config, 2, draw).unwrap();
            assert_eq!(a.bit_key(), b.bit_key());
            assert_eq!(rec_a, rec_b);
            let replay = apply_transform(&rec_a.params, &img, &config).unwrap();
            assert_eq!(replay.bit_key(), a.bit_key());
        }
    }

    #[test]
    fn kinds_are_drawn_uniformly() {
        let img = grid(4, 4);
        let config = MutationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 9];
        let draws = 10_000;
        for i in 0..draws {
            let (_, rec) = random_mutation(&img, &mut rng, &config, 0, i).unwrap();
            counts[MutationKind::ALL.iter().position(|&k| k == rec.params.kind()).unwrap()] += 1;
        }
        let expected = draws as f64 / 9.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 8 degrees of freedom, p = 0.001
        assert!(chi2 < 26.12, "chi2 = {chi2}, counts = {counts:?}");
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 9.0).abs() <= 0.02);
        }
    }

    #[test]
    fn record_round_trips_through_json() {
        let rec = MutationRecord {
            params: MutationParams::Noise {
                sigma: 0.0312345678901,
                seed: u64::MAX,
            },
            parent_id: 4,
            draw_index: 99,
        };
        let json = serde_json::to_string(&rec).unwrap();
        assert_eq!(serde_json::from_str::<MutationRecord>(&json).unwrap(), rec);
    }
}
