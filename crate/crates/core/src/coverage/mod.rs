//! Coverage signals.
//!
//! A [`Coverage`] owns an occupancy bitset over a metric's item universe.
//! Observing a record is split into a pure step ([`Coverage::items`]) that
//! lists the items a record touches and a merge step
//! ([`Coverage::mark`]) that sets them, so candidate sets can be computed in
//! parallel and merged in a fixed order.
//!
//! The four basic strategies have an empty universe; their admission policy
//! lives in [`Coverage::admits`].

mod bins;
mod profile;

use std::fmt;
use std::str::FromStr;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

pub use bins::{bin_edge, bin_index, bin_index_in_range, kmvp_bin, KmvpMode};
pub use profile::{profile, ProfileSpace, ProfilingStats};

use crate::diversity::DiversityError;
use crate::image::ImageTensor;
use crate::model::{ActivationTrace, ModelError, ModelGraph, StimulationPattern};
use crate::safety::ViolationReport;

#[derive(Debug, thiserror::Error)]
pub enum CoverageError {
    #[error("profiling dataset is empty")]
    EmptyProfilingSet,
    #[error("vector has {actual} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("report covers {actual} electrodes, coverage state expects {expected}")]
    ElectrodeMismatch { expected: usize, actual: usize },
    #[error("{0} requires profiling statistics over {1:?}")]
    MissingStats(MetricKind, ProfileSpace),
    #[error("profiling statistics describe {actual:?}, {metric} needs {expected:?}")]
    WrongStatsSpace {
        metric: MetricKind,
        expected: ProfileSpace,
        actual: ProfileSpace,
    },
    #[error("{0} requires an activation trace")]
    MissingTrace(MetricKind),
    #[error("{0} requires a feature vector")]
    MissingFeatures(MetricKind),
    #[error("feature-space profiling requires a feature extractor")]
    MissingExtractor,
    #[error("invalid metric configuration: {0}")]
    Config(String),
    #[error("profiling statistics: {0}")]
    Stats(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Features(#[from] DiversityError),
}

/// Coverage metrics and basic seed-management strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetricKind {
    /// Mutates, never grows the seed set.
    #[serde(rename = "B-N")]
    BasicNone,
    /// Mutates, adds every mutant to the seed set.
    #[serde(rename = "B-A")]
    BasicAll,
    /// Uniform random images, no seeds.
    #[serde(rename = "B-FR")]
    BasicRandom,
    /// Local perturbation of the most productive seed.
    #[serde(rename = "B-Local")]
    BasicLocal,
    #[serde(rename = "N-NC")]
    NeuronCoverage,
    #[serde(rename = "N-KMNC")]
    KMultisectionNeuron,
    #[serde(rename = "N-NBC")]
    NeuronBoundary,
    #[serde(rename = "N-SNAC")]
    StrongNeuronActivation,
    #[serde(rename = "N-TKNC")]
    TopKNeuron,
    #[serde(rename = "VO-KMVP")]
    Kmvp,
    #[serde(rename = "VO-KMOC")]
    Kmoc,
    #[serde(rename = "VO-KMVP-V")]
    KmvpViolation,
    #[serde(rename = "VO-VCC")]
    Vcc,
    #[serde(rename = "I-KMIC")]
    Kmic,
    #[serde(rename = "I-Div-Approx")]
    DivApprox,
}

impl MetricKind {
    pub const ALL: [MetricKind; 15] = [
        MetricKind::BasicNone,
        MetricKind::BasicAll,
        MetricKind::BasicRandom,
        MetricKind::BasicLocal,
        MetricKind::NeuronCoverage,
        MetricKind::KMultisectionNeuron,
        MetricKind::NeuronBoundary,
        MetricKind::StrongNeuronActivation,
        MetricKind::TopKNeuron,
        MetricKind::Kmvp,
        MetricKind::Kmoc,
        MetricKind::KmvpViolation,
        MetricKind::Vcc,
        MetricKind::Kmic,
        MetricKind::DivApprox,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::BasicNone => "B-N",
            MetricKind::BasicAll => "B-A",
            MetricKind::BasicRandom => "B-FR",
            MetricKind::BasicLocal => "B-Local",
            MetricKind::NeuronCoverage => "N-NC",
            MetricKind::KMultisectionNeuron => "N-KMNC",
            MetricKind::NeuronBoundary => "N-NBC",
            MetricKind::StrongNeuronActivation => "N-SNAC",
            MetricKind::TopKNeuron => "N-TKNC",
            MetricKind::Kmvp => "VO-KMVP",
            MetricKind::Kmoc => "VO-KMOC",
            MetricKind::KmvpViolation => "VO-KMVP-V",
            MetricKind::Vcc => "VO-VCC",
            MetricKind::Kmic => "I-KMIC",
            MetricKind::DivApprox => "I-Div-Approx",
        }
    }

    pub fn is_basic(self) -> bool {
        matches!(
            self,
            MetricKind::BasicNone | MetricKind::BasicAll | MetricKind::BasicRandom | MetricKind::BasicLocal
        )
    }

    pub fn needs_trace(self) -> bool {
        matches!(
            self,
            MetricKind::NeuronCoverage
                | MetricKind::KMultisectionNeuron
                | MetricKind::NeuronBoundary
                | MetricKind::StrongNeuronActivation
                | MetricKind::TopKNeuron
        )
    }

    pub fn needs_features(self) -> bool {
        self == MetricKind::DivApprox
    }

    /// The space that must be profiled before the metric can run, if any.
    pub fn profile_space(self) -> Option<ProfileSpace> {
        match self {
            MetricKind::KMultisectionNeuron | MetricKind::NeuronBoundary | MetricKind::StrongNeuronActivation => {
                Some(ProfileSpace::Neurons)
            }
            MetricKind::Kmoc => Some(ProfileSpace::Outputs),
            MetricKind::DivApprox => Some(ProfileSpace::Features),
            _ => None,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown strategy {s:?}"))
    }
}

/// Metric hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub kind: MetricKind,
    /// Bins per dimension.
    pub k: usize,
    /// Proportion range binned by the KMVP family.
    pub kmvp_range: [f64; 2],
    /// NC activation threshold.
    pub nc_threshold: f64,
    /// Neurons per layer counted by TKNC.
    pub tknc_k: usize,
}

impl MetricConfig {
    pub fn new(kind: MetricKind) -> Self {
        Self {
            kind,
            k: 10,
            kmvp_range: [0.0, 2.0],
            nc_threshold: 0.5,
            tknc_k: 2,
        }
    }

    pub fn validate(&self) -> Result<(), CoverageError> {
        if self.k == 0 {
            return Err(CoverageError::Config("k must be >= 1".into()));
        }
        let [lo, hi] = self.kmvp_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(CoverageError::Config(format!(
                "kmvp_range [{lo}, {hi}] must satisfy min < max"
            )));
        }
        if !self.nc_threshold.is_finite() {
            return Err(CoverageError::Config("nc_threshold must be finite".into()));
        }
        if self.tknc_k == 0 {
            return Err(CoverageError::Config("tknc_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Everything metrics read about one executed test.
#[derive(Debug, Clone, PartialEq)]
pub struct TestRecord {
    pub image: ImageTensor,
    pub raw: Vec<f32>,
    pub pattern: StimulationPattern,
    pub report: ViolationReport,
    pub trace: Option<ActivationTrace>,
    pub features: Option<Vec<f32>>,
}

/// Occupancy bitset with a cached popcount.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageState {
    bits: BitVec<u64, Lsb0>,
    covered: usize,
}

impl CoverageState {
    pub fn new(universe: usize) -> Self {
        Self {
            bits: bitvec![u64, Lsb0; 0; universe],
            covered: 0,
        }
    }

    pub fn universe(&self) -> usize {
        self.bits.len()
    }

    pub fn covered(&self) -> usize {
        self.covered
    }

    pub fn fraction(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.covered as f64 / self.bits.len() as f64
        }
    }

    pub fn is_covered(&self, item: usize) -> bool {
        self.bits[item]
    }

    pub fn bits(&self) -> &BitSlice<u64, Lsb0> {
        &self.bits
    }

    /// Sets the given items, returning how many were previously clear.
    pub fn mark(&mut self, items: &[usize]) -> usize {
        let mut newly = 0;
        for &i in items {
            if !self.bits.replace(i, true) {
                newly += 1;
            }
        }
        self.covered += newly;
        newly
    }
}

/// Shape of the spaces a metric may bin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageDims {
    pub electrodes: usize,
    pub outputs: usize,
    pub pixels: usize,
    pub layer_sizes: Vec<usize>,
    pub features: usize,
}

impl CoverageDims {
    pub fn of_model(model: &ModelGraph, features: usize) -> Self {
        let (h, w) = model.input_shape();
        Self {
            electrodes: model.layout().electrode_count,
            outputs: model.output_len(),
            pixels: h * w,
            layer_sizes: model.layer_sizes().to_vec(),
            features,
        }
    }

    pub fn neurons(&self) -> usize {
        self.layer_sizes.iter().sum()
    }
}

/// A metric bound to its universe and (where needed) profiling statistics.
#[derive(Debug, Clone)]
pub struct Coverage {
    config: MetricConfig,
    dims: CoverageDims,
    stats: Option<ProfilingStats>,
    state: CoverageState,
}

impl Coverage {
    pub fn new(config: MetricConfig, dims: CoverageDims, stats: Option<ProfilingStats>) -> Result<Self, CoverageError> {
        config.validate()?;
        let kind = config.kind;
        let stats = match kind.profile_space() {
            None => None,
            Some(space) => {
                let s = stats.ok_or(CoverageError::MissingStats(kind, space))?;
                if s.space != space {
                    return Err(CoverageError::WrongStatsSpace {
                        metric: kind,
                        expected: space,
                        actual: s.space,
                    });
                }
                let expected = match space {
                    ProfileSpace::Outputs => dims.outputs,
                    ProfileSpace::Neurons => dims.neurons(),
                    ProfileSpace::Features => dims.features,
                };
                if s.dims() != expected {
                    return Err(CoverageError::DimensionMismatch {
                        expected,
                        actual: s.dims(),
                    });
                }
                Some(s)
            }
        };
        let universe = universe_size(&config, &dims);
        Ok(Self {
            config,
            dims,
            stats,
            state: CoverageState::new(universe),
        })
    }

    pub fn config(&self) -> &MetricConfig {
        &self.config
    }

    pub fn kind(&self) -> MetricKind {
        self.config.kind
    }

    pub fn state(&self) -> &CoverageState {
        &self.state
    }

    pub fn universe(&self) -> usize {
        self.state.universe()
    }

    pub fn fraction(&self) -> f64 {
        self.state.fraction()
    }

    /// Empty copy with the same configuration.
    pub fn fresh(&self) -> Self {
        Self {
            state: CoverageState::new(self.universe()),
            ..self.clone()
        }
    }

    /// Whether a mutant that newly covered `newly` items joins the corpus.
    pub fn admits(&self, newly: usize) -> bool {
        match self.config.kind {
            MetricKind::BasicAll => true,
            MetricKind::BasicNone | MetricKind::BasicRandom | MetricKind::BasicLocal => false,
            _ => newly > 0,
        }
    }

    pub fn observe(&mut self, record: &TestRecord) -> Result<usize, CoverageError> {
        let items = self.items(record)?;
        Ok(self.mark(&items))
    }

    pub fn mark(&mut self, items: &[usize]) -> usize {
        self.state.mark(items)
    }

    /// Items a record touches. Pure.
    pub fn items(&self, record: &TestRecord) -> Result<Vec<usize>, CoverageError> {
        let c = &self.config;
        let k = c.k;
        let kind = c.kind;
        Ok(match kind {
            MetricKind::BasicNone | MetricKind::BasicAll | MetricKind::BasicRandom | MetricKind::BasicLocal => {
                Vec::new()
            }
            MetricKind::Kmvp => self.kmvp_items(&record.report, k, KmvpMode::All)?,
            MetricKind::KmvpViolation => self.kmvp_items(&record.report, k, KmvpMode::ViolationOnly)?,
            MetricKind::Vcc => self.kmvp_items(&record.report, 2, KmvpMode::Vcc)?,
            MetricKind::Kmoc => {
                let stats = self.stats.as_ref().expect("checked at construction");
                check_len(self.dims.outputs, record.raw.len())?;
                record
                    .raw
                    .iter()
                    .enumerate()
                    .map(|(o, &v)| o * k + bin_index(v as f64, stats.lo[o], stats.hi[o], k))
                    .collect()
            }
            MetricKind::Kmic => {
                check_len(self.dims.pixels, record.image.len())?;
                record
                    .image
                    .pixels()
                    .iter()
                    .enumerate()
                    .map(|(p, &v)| p * k + bin_index(v as f64, 0.0, 1.0, k))
                    .collect()
            }
            MetricKind::DivApprox => {
                let stats = self.stats.as_ref().expect("checked at construction");
                let features = record.features.as_ref().ok_or(CoverageError::MissingFeatures(kind))?;
                check_len(self.dims.features, features.len())?;
                features
                    .iter()
                    .enumerate()
                    .map(|(f, &v)| f * k + bin_index(v as f64, stats.lo[f], stats.hi[f], k))
                    .collect()
            }
            MetricKind::NeuronCoverage
            | MetricKind::KMultisectionNeuron
            | MetricKind::NeuronBoundary
            | MetricKind::StrongNeuronActivation
            | MetricKind::TopKNeuron => {
                let trace = record.trace.as_ref().ok_or(CoverageError::MissingTrace(kind))?;
                self.neuron_items(trace)?
            }
        })
    }

    /// Item order: IC, AE, then PI per electrode, then CD per electrode; `bins` items each.
    fn kmvp_items(&self, report: &ViolationReport, bins: usize, mode: KmvpMode) -> Result<Vec<usize>, CoverageError> {
        let n = self.dims.electrodes;
        if report.electrode_count() != n || report.cd.len() != n {
            return Err(CoverageError::ElectrodeMismatch {
                expected: n,
                actual: report.electrode_count(),
            });
        }
        let [min, max] = self.config.kmvp_range;
        let proportions = [report.ic, report.ae]
            .into_iter()
            .chain(report.pi.iter().copied())
            .chain(report.cd.iter().copied());
        Ok(proportions
            .enumerate()
            .filter_map(|(dim, p)| kmvp_bin(p, bins, min, max, mode).map(|b| dim * bins + b))
            .collect())
    }

    fn neuron_items(&self, trace: &ActivationTrace) -> Result<Vec<usize>, CoverageError> {
        check_len(self.dims.neurons(), trace.neuron_count())?;
        let c = &self.config;
        let mut items = Vec::new();
        match c.kind {
            MetricKind::NeuronCoverage => {
                items.extend(
                    trace
                        .flat()
                        .enumerate()
                        .filter(|(_, v)| *v as f64 >= c.nc_threshold)
                        .map(|(j, _)| j),
                );
            }
            MetricKind::KMultisectionNeuron => {
                let s = self.stats.as_ref().expect("checked at construction");
                for (j, v) in trace.flat().enumerate() {
                    if let Some(b) = bin_index_in_range(v as f64, s.lo[j], s.hi[j], c.k) {
                        items.push(j * c.k + b);
                    }
                }
            }
            MetricKind::NeuronBoundary => {
                let s = self.stats.as_ref().expect("checked at construction");
                for (j, v) in trace.flat().enumerate() {
                    let v = v as f64;
                    if v < s.lo[j] {
                        items.push(2 * j);
                    } else if v > s.hi[j] {
                        items.push(2 * j + 1);
                    }
                }
            }
            MetricKind::StrongNeuronActivation => {
                let s = self.stats.as_ref().expect("checked at construction");
                items.extend(
                    trace
                        .flat()
                        .enumerate()
                        .filter(|&(j, v)| v as f64 > s.hi[j])
                        .map(|(j, _)| j),
                );
            }
            MetricKind::TopKNeuron => {
                let mut offset = 0;
                for layer in &trace.layers {
                    let mut order: Vec<usize> = (0..layer.len()).collect();
                    // Descending value, ties to the lower index.
                    order.sort_by(|&a, &b| layer[b].total_cmp(&layer[a]).then(a.cmp(&b)));
                    items.extend(order.into_iter().take(c.tknc_k).map(|j| offset + j));
                    offset += layer.len();
                }
            }
            _ => unreachable!("not a neuron metric"),
        }
        Ok(items)
    }
}

fn check_len(expected: usize, actual: usize) -> Result<(), CoverageError> {
    if expected == actual {
        Ok(())
    } else {
        Err(CoverageError::DimensionMismatch { expected, actual })
    }
}

/// Number of coverable items for a metric over the given spaces.
pub fn universe_size(config: &MetricConfig, dims: &CoverageDims) -> usize {
    let k = config.k;
    let n = dims.neurons();
    match config.kind {
        MetricKind::BasicNone | MetricKind::BasicAll | MetricKind::BasicRandom | MetricKind::BasicLocal => 0,
        MetricKind::Kmvp | MetricKind::KmvpViolation => k * 2 + k * 2 * dims.electrodes,
        MetricKind::Vcc => 2 * 2 + 2 * 2 * dims.electrodes,
        MetricKind::Kmoc => k * dims.outputs,
        MetricKind::Kmic => k * dims.pixels,
        MetricKind::DivApprox => k * dims.features,
        MetricKind::NeuronCoverage | MetricKind::StrongNeuronActivation | MetricKind::TopKNeuron => n,
        MetricKind::KMultisectionNeuron => k * n,
        MetricKind::NeuronBoundary => 2 * n,
    }
}
