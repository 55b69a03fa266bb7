//! Diversity of a violation set.
//!
//! Geometric diversity (GD) is the log-determinant of the Gram matrix of
//! input feature vectors; violation-space diversity (VD) is the norm of the
//! per-column standard deviations of the per-electrode
//! `(degree_PI, degree_CD, amplitude)` rows.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::image::ImageTensor;
use crate::model::{ModelError, ModelGraph, StimulationPattern};
use crate::safety::ViolationReport;

#[derive(Debug, thiserror::Error)]
pub enum DiversityError {
    #[error("no rows to score")]
    Empty,
    #[error("row {row} has {actual} entries, expected {expected}")]
    RowLength { row: usize, expected: usize, actual: usize },
    #[error("row {row} contains a non-finite value")]
    NonFinite { row: usize },
    #[error("report has {report} electrodes, pattern has {pattern}")]
    LengthMismatch { report: usize, pattern: usize },
    #[error("unknown feature extractor {0:?}")]
    UnknownExtractor(String),
    #[error("feature extractor: {0}")]
    Model(#[from] ModelError),
}

/// Maps an image to a feature vector.
#[derive(Debug, Clone)]
pub enum FeatureExtractor {
    /// Adaptive 8×8 average pooling of the pixels.
    Pool8,
    /// The raw pixels.
    Pixels,
    /// A NEF model whose final-layer output is the feature vector.
    Model { id: String, model: Box<ModelGraph> },
}

impl FeatureExtractor {
    /// Parses `builtin:pool8` or `builtin:pixels`; anything else must be a model.
    pub fn builtin(name: &str) -> Result<Self, DiversityError> {
        match name {
            "builtin:pool8" => Ok(Self::Pool8),
            "builtin:pixels" => Ok(Self::Pixels),
            other => Err(DiversityError::UnknownExtractor(other.to_string())),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Self::Pool8 => "builtin:pool8".into(),
            Self::Pixels => "builtin:pixels".into(),
            Self::Model { id, .. } => id.clone(),
        }
    }

    /// Feature length for an input of the given shape.
    pub fn dims(&self, input_shape: (usize, usize)) -> usize {
        match self {
            Self::Pool8 => 64,
            Self::Pixels => input_shape.0 * input_shape.1,
            Self::Model { model, .. } => model.output_len(),
        }
    }

    pub fn extract(&self, image: &ImageTensor) -> Result<Vec<f32>, DiversityError> {
        match self {
            Self::Pool8 => Ok(adaptive_pool(image, 8, 8)),
            Self::Pixels => Ok(image.pixels().to_vec()),
            Self::Model { model, .. } => Ok(model.forward(image, false)?.0),
        }
    }
}

/// Average pooling onto an `oh × ow` grid; cell `i` spans rows
/// `floor(i·H/oh) .. ceil((i+1)·H/oh)`.
pub fn adaptive_pool(image: &ImageTensor, oh: usize, ow: usize) -> Vec<f32> {
    let (h, w) = image.shape();
    let span = |i: usize, n: usize, o: usize| (i * n / o, ((i + 1) * n).div_ceil(o));
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        let (r0, r1) = span(i, h, oh);
        for j in 0..ow {
            let (c0, c1) = span(j, w, ow);
            let mut sum = 0.0f64;
            for r in r0..r1 {
                for c in c0..c1 {
                    sum += image.get(r, c) as f64;
                }
            }
            out.push((sum / ((r1 - r0) * (c1 - c0)) as f64) as f32);
        }
    }
    out
}

fn check_rows<T: Copy + Into<f64>>(rows: &[Vec<T>]) -> Result<usize, DiversityError> {
    let first = rows.first().ok_or(DiversityError::Empty)?;
    for (i, r) in rows.iter().enumerate() {
        if r.len() != first.len() {
            return Err(DiversityError::RowLength {
                row: i,
                expected: first.len(),
                actual: r.len(),
            });
        }
        if r.iter().any(|&v| !v.into().is_finite()) {
            return Err(DiversityError::NonFinite { row: i });
        }
    }
    Ok(first.len())
}

/// Log-determinant of `A Aᵀ`. Returns `-inf` when the Gram matrix is singular
/// (any eigenvalue below `1e-12` times the largest).
pub fn geometric_diversity<T: Copy + Into<f64>>(features: &[Vec<T>]) -> Result<f64, DiversityError> {
    let d = check_rows(features)?;
    let n = features.len();
    let a = DMatrix::from_fn(n, d, |i, j| features[i][j].into());
    let gram = &a * a.transpose();
    let eigen = gram.symmetric_eigen();
    let max = eigen.eigenvalues.iter().copied().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let mut logdet = 0.0;
    for &lambda in eigen.eigenvalues.iter() {
        if lambda < 1e-12 * max {
            return Ok(f64::NEG_INFINITY);
        }
        logdet += lambda.ln();
    }
    Ok(logdet)
}

/// How far a proportion exceeds its limit; zero when safe.
pub fn violation_degree(proportion: f64) -> f64 {
    (proportion - 1.0).max(0.0)
}

/// `(degree_PI, degree_CD, amplitude)` per electrode, concatenated.
pub fn violation_space_row(report: &ViolationReport, pattern: &StimulationPattern) -> Result<Vec<f64>, DiversityError> {
    let n = pattern.electrode_count();
    if report.electrode_count() != n || report.cd.len() != n {
        return Err(DiversityError::LengthMismatch {
            report: report.electrode_count(),
            pattern: n,
        });
    }
    Ok((0..n)
        .flat_map(|i| {
            [
                violation_degree(report.pi[i]),
                violation_degree(report.cd[i]),
                pattern.amplitude_ua[i] as f64,
            ]
        })
        .collect())
}

/// Euclidean norm of the population standard deviation of each column.
pub fn violation_space_std(rows: &[Vec<f64>]) -> Result<f64, DiversityError> {
    let d = check_rows(rows)?;
    let n = rows.len() as f64;
    let mut total = 0.0;
    for j in 0..d {
        let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        total += var;
    }
    Ok(total.sqrt())
}

/// Rescales each column to `[0, 1]`; constant columns become zero.
pub fn min_max_normalize(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let d = first.len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for r in rows {
        for j in 0..d {
            lo[j] = lo[j].min(r[j]);
            hi[j] = hi[j].max(r[j]);
        }
    }
    rows.iter()
        .map(|r| {
            (0..d)
                .map(|j| {
                    if hi[j] > lo[j] {
                        (r[j] - lo[j]) / (hi[j] - lo[j])
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Subsampling protocol for [`diversity_summary`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityProtocol {
    pub subset_size: usize,
    pub subsets: usize,
    /// Min-max normalize violation-space columns before the STD.
    pub normalize: bool,
}

impl Default for DiversityProtocol {
    fn default() -> Self {
        Self {
            subset_size: 200,
            subsets: 5,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityScores {
    /// Mean log-determinant; `-inf` if any subset is singular.
    #[serde(with = "extended_f64")]
    pub gd_logdet: f64,
    pub vd_std: f64,
    /// Violations available.
    pub n: usize,
    /// Subsets actually scored.
    pub subsets: usize,
    /// Rows per scored subset.
    pub subset_size: usize,
    /// True when fewer than `subset_size` violations forced a single full-set computation.
    pub full_set_fallback: bool,
    pub extractor: String,
    pub normalized: bool,
}

/// GD and VD averaged over random subsets, or over the full set when it is
/// smaller than one subset.
pub fn diversity_summary<R: Rng + ?Sized>(
    features: &[Vec<f32>],
    vs_rows: &[Vec<f64>],
    rng: &mut R,
    protocol: &DiversityProtocol,
    extractor_id: &str,
) -> Result<DiversityScores, DiversityError> {
    let n = features.len();
    if n == 0 {
        return Err(DiversityError::Empty);
    }
    if vs_rows.len() != n {
        return Err(DiversityError::LengthMismatch {
            report: vs_rows.len(),
            pattern: n,
        });
    }
    let normalized;
    let vs: &[Vec<f64>] = if protocol.normalize {
        normalized = min_max_normalize(vs_rows);
        &normalized
    } else {
        vs_rows
    };
    let full_set_fallback = n < protocol.subset_size || protocol.subsets == 0;
    let subsets: Vec<Vec<usize>> = if full_set_fallback {
        vec![(0..n).collect()]
    } else {
        (0..protocol.subsets)
            .map(|_| sample(rng, n, protocol.subset_size).into_vec())
            .collect()
    };
    let mut gd = 0.0;
    let mut vd = 0.0;
    for idx in &subsets {
        let f: Vec<Vec<f32>> = idx.iter().map(|&i| features[i].clone()).collect();
        let v: Vec<Vec<f64>> = idx.iter().map(|&i| vs[i].clone()).collect();
        gd += geometric_diversity(&f)?;
        vd += violation_space_std(&v)?;
    }
    let count = subsets.len() as f64;
    Ok(DiversityScores {
        gd_logdet: gd / count,
        vd_std: vd / count,
        n,
        subsets: subsets.len(),
        subset_size: subsets[0].len(),
        full_set_fallback,
        extractor: extractor_id.to_string(),
        normalized: protocol.normalize,
    })
}

/// Serializes non-finite floats as the strings `"inf"`, `"-inf"`, `"nan"`.
pub mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other:?}"))),
            },
        }
    }
}
