use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CoverageError;
use crate::diversity::FeatureExtractor;
use crate::image::ImageTensor;
use crate::model::ModelGraph;

/// Which vector a profile describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSpace {
    /// Raw encoder outputs.
    Outputs,
    /// Every entry of the activation trace.
    Neurons,
    /// Feature-extractor outputs.
    Features,
}

impl std::str::FromStr for ProfileSpace {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "outputs" => Ok(Self::Outputs),
            "neurons" => Ok(Self::Neurons),
            "features" => Ok(Self::Features),
            other => Err(format!(
                "unknown profile space {other:?} (expected outputs, neurons or features)"
            )),
        }
    }
}

/// Per-dimension observed bounds over a profiling dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilingStats {
    pub space: ProfileSpace,
    pub samples: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ProfilingStats {
    pub fn dims(&self) -> usize {
        self.lo.len()
    }

    /// Min/max over vectors of equal length, in iteration order.
    pub fn from_vectors<I, V>(space: ProfileSpace, vectors: I) -> Result<Self, CoverageError>
    where
        I: IntoIterator<Item = V>,
        V: AsRef<[f32]>,
    {
        let mut lo: Vec<f64> = Vec::new();
        let mut hi: Vec<f64> = Vec::new();
        let mut samples = 0;
        for v in vectors {
            let v = v.as_ref();
            if samples == 0 {
                lo = v.iter().map(|&x| x as f64).collect();
                hi = lo.clone();
            } else if v.len() != lo.len() {
                return Err(CoverageError::DimensionMismatch {
                    expected: lo.len(),
                    actual: v.len(),
                });
            } else {
                for (i, &x) in v.iter().enumerate() {
                    lo[i] = lo[i].min(x as f64);
                    hi[i] = hi[i].max(x as f64);
                }
            }
            samples += 1;
        }
        if samples == 0 {
            return Err(CoverageError::EmptyProfilingSet);
        }
        Ok(Self { space, samples, lo, hi })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, CoverageError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CoverageError::Stats(format!("{}: {e}", path.display())))?;
        let stats: Self =
            serde_json::from_str(&text).map_err(|e| CoverageError::Stats(format!("{}: {e}", path.display())))?;
        if stats.hi.len() != stats.lo.len() || stats.lo.iter().zip(&stats.hi).any(|(l, h)| !(l <= h)) {
            return Err(CoverageError::Stats(format!("{}: lo/hi inconsistent", path.display())));
        }
        Ok(stats)
    }
}

/// Profiles a model over a dataset in the requested space.
pub fn profile(
    model: &ModelGraph,
    dataset: &[ImageTensor],
    space: ProfileSpace,
    extractor: Option<&FeatureExtractor>,
) -> Result<ProfilingStats, CoverageError> {
    if dataset.is_empty() {
        return Err(CoverageError::EmptyProfilingSet);
    }
    let vectors: Vec<Vec<f32>> = dataset
        .iter()
        .map(|img| -> Result<Vec<f32>, CoverageError> {
            Ok(match space {
                ProfileSpace::Outputs => model.forward(img, false)?.0,
                ProfileSpace::Neurons => model.forward(img, true)?.1.expect("trace requested").flat().collect(),
                ProfileSpace::Features => extractor.ok_or(CoverageError::MissingExtractor)?.extract(img)?,
            })
        })
        .collect::<Result<_, _>>()?;
    ProfilingStats::from_vectors(space, &vectors)
}
