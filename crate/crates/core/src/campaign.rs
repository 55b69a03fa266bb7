//! End-to-end campaigns driven by a [`CampaignConfig`], and their artifacts.
//!
//! Artifact layout under the output directory:
//!
//! ```text
//! report.json               deterministic summary (identical for identical configs)
//! timings.json              wall-clock timings
//! campaign.jsonl            one log entry per executed test
//! violations/manifest.json  one entry per unique violating input
//! violations/*.pgm          the violating inputs
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{BudgetMode, CampaignConfig};
use crate::coverage::{profile, Coverage, CoverageDims, CoverageError, MetricConfig, ProfilingStats};
use crate::diversity::{diversity_summary, violation_space_row, DiversityError, FeatureExtractor};
use crate::fuzzer::{
    budget_for_strategy, fuzz, replay, write_log, FuzzConfig, FuzzError, FuzzOutcome, Fuzzer, Origin, ReplayOutcome,
    Target, ViolationEntry,
};
use crate::image::{ImageError, ImageTensor};
use crate::model::{load_model, ModelError, ModelGraph};
use crate::report::{CampaignReport, CoverageSummary, ModelInfo, Timings};
use crate::safety::ViolationFlags;

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("model {path}: {source}")]
    Model {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
    #[error("seeds: {0}")]
    Seeds(#[source] ImageError),
    #[error("profiling data: {0}")]
    ProfilingData(#[source] ImageError),
    #[error("profiling: {0}")]
    Profiling(#[source] CoverageError),
    #[error("feature extractor: {0}")]
    Extractor(#[source] DiversityError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Fuzz(#[from] FuzzError),
    #[error("diversity: {0}")]
    Diversity(#[source] DiversityError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loaded model, seeds, extractor and (if needed) profiling statistics.
pub struct Prepared {
    pub model: ModelGraph,
    pub model_info: ModelInfo,
    pub seeds: Vec<ImageTensor>,
    pub extractor: FeatureExtractor,
    pub stats: Option<ProfilingStats>,
    pub profiling_s: f64,
}

impl Prepared {
    pub fn target<'a>(&'a self, config: &'a CampaignConfig) -> Target<'a> {
        Target {
            model: &self.model,
            limits: &config.limits,
            extractor: Some(&self.extractor),
        }
    }

    pub fn dims(&self) -> CoverageDims {
        CoverageDims::of_model(&self.model, self.extractor.dims(self.model.input_shape()))
    }

    /// Fresh coverage state for `metric`, profiling on demand if `metric`
    /// needs a different space than the prepared statistics.
    pub fn coverage(&self, config: &CampaignConfig, metric: MetricConfig) -> Result<Coverage, CampaignError> {
        let stats = match metric.kind.profile_space() {
            None => None,
            Some(space) => match &self.stats {
                Some(s) if s.space == space => Some(s.clone()),
                _ => Some(profile_for(config, &self.model, &self.extractor, space)?),
            },
        };
        Ok(Coverage::new(metric, self.dims(), stats)?)
    }
}

/// Loads a NEF model and hashes its bytes.
pub fn load_model_with_info(config: &CampaignConfig) -> Result<(ModelGraph, ModelInfo), CampaignError> {
    let path = config.resolve(&config.model_path);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    let model = load_model(&bytes).map_err(|source| CampaignError::Model {
        path: path.clone(),
        source,
    })?;
    let info = ModelInfo {
        path: config.model_path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
        electrodes: model.layout().electrode_count,
        input_shape: model.input_shape(),
    };
    Ok((model, info))
}

/// `builtin:pool8`, `builtin:pixels`, or a NEF path relative to the config.
pub fn load_extractor(config: &CampaignConfig) -> Result<FeatureExtractor, CampaignError> {
    let spec = &config.diversity.extractor;
    if spec.starts_with("builtin:") {
        return FeatureExtractor::builtin(spec).map_err(CampaignError::Extractor);
    }
    let path = config.resolve(Path::new(spec));
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    let model = load_model(&bytes).map_err(|source| CampaignError::Model { path, source })?;
    Ok(FeatureExtractor::Model {
        id: format!("{spec}#{}", &hex::encode(Sha256::digest(&bytes))[..16]),
        model: Box::new(model),
    })
}

fn profile_for(
    config: &CampaignConfig,
    model: &ModelGraph,
    extractor: &FeatureExtractor,
    space: crate::coverage::ProfileSpace,
) -> Result<ProfilingStats, CampaignError> {
    if let Some(path) = &config.profiling_stats {
        let stats = ProfilingStats::load(&config.resolve(path)).map_err(CampaignError::Profiling)?;
        if stats.space == space {
            return Ok(stats);
        }
    }
    let Some(data) = &config.profiling_data else {
        return Err(CampaignError::Profiling(CoverageError::MissingStats(
            config.metric.kind,
            space,
        )));
    };
    let images = ImageTensor::load_path(&config.resolve(data)).map_err(CampaignError::ProfilingData)?;
    profile(model, &images, space, Some(extractor)).map_err(CampaignError::Profiling)
}

pub fn prepare(config: &CampaignConfig) -> Result<Prepared, CampaignError> {
    let (model, model_info) = load_model_with_info(config)?;
    let seeds = ImageTensor::load_path(&config.resolve(&config.seeds_path)).map_err(CampaignError::Seeds)?;
    let extractor = load_extractor(config)?;
    let started = Instant::now();
    let stats = match config.metric.kind.profile_space() {
        Some(space) => Some(profile_for(config, &model, &extractor, space)?),
        None => None,
    };
    Ok(Prepared {
        model,
        model_info,
        seeds,
        extractor,
        stats,
        profiling_s: started.elapsed().as_secs_f64(),
    })
}

/// Seconds per test for `metric`, measured over `tests` tests past the seeds.
fn time_per_test(
    prepared: &Prepared,
    config: &CampaignConfig,
    metric: MetricConfig,
    tests: u64,
) -> Result<f64, CampaignError> {
    let coverage = prepared.coverage(config, metric)?;
    let fuzz_config = FuzzConfig {
        test_limit: prepared.seeds.len() as u64 + tests,
        ..config.fuzz.clone()
    };
    let started = Instant::now();
    let outcome = Fuzzer::new(prepared.target(config), prepared.seeds.clone(), coverage, fuzz_config)?.run()?;
    Ok(started.elapsed().as_secs_f64() / outcome.tests_executed.max(1) as f64)
}

/// Test budget for this campaign: fixed, or scaled to the baseline's wall-clock time.
pub fn calibrate_budget(prepared: &Prepared, config: &CampaignConfig) -> Result<u64, CampaignError> {
    match config.budget.mode {
        BudgetMode::Fixed => Ok(config.budget.test_limit),
        BudgetMode::EqualTime => {
            let n = config.budget.calibration_tests;
            let baseline = MetricConfig {
                kind: config.budget.baseline,
                ..config.metric
            };
            let base_t = time_per_test(prepared, config, baseline, n)?;
            let strat_t = time_per_test(prepared, config, config.metric, n)?;
            Ok(budget_for_strategy(base_t, strat_t, config.budget.test_limit)?)
        }
    }
}

/// A finished campaign with its artifacts in memory.
pub struct CampaignRun {
    pub report: CampaignReport,
    pub timings: Timings,
    pub outcome: FuzzOutcome,
}

/// Derived stream for diversity subsampling, independent of the fuzzing stream.
fn diversity_rng(rng_seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(rng_seed ^ 0xD1B5_4A32_D192_ED03)
}

/// Features and violation-space rows of every violation, in set order.
pub fn violation_features(
    extractor: &FeatureExtractor,
    entries: &[ViolationEntry],
) -> Result<(Vec<Vec<f32>>, Vec<Vec<f64>>), DiversityError> {
    let features = entries
        .par_iter()
        .map(|e| extractor.extract(&e.image))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = entries
        .iter()
        .map(|e| violation_space_row(&e.report, &e.pattern))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((features, rows))
}

pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignRun, CampaignError> {
    let started = Instant::now();
    let prepared = prepare(config)?;

    let calibration_started = Instant::now();
    let test_limit = calibrate_budget(&prepared, config)?;
    let calibration_s = if config.budget.mode == BudgetMode::EqualTime {
        calibration_started.elapsed().as_secs_f64()
    } else {
        0.0
    };

    let coverage = prepared.coverage(config, config.metric)?;
    let fuzz_config = FuzzConfig {
        test_limit,
        ..config.fuzz.clone()
    };
    let fuzz_started = Instant::now();
    let outcome = fuzz(prepared.target(config), prepared.seeds.clone(), coverage, fuzz_config)?;
    let fuzzing_s = fuzz_started.elapsed().as_secs_f64();

    let diversity_started = Instant::now();
    let diversity = if outcome.violations.is_empty() {
        None
    } else {
        let (features, rows) =
            violation_features(&prepared.extractor, outcome.violations.entries()).map_err(CampaignError::Diversity)?;
        let scores = diversity_summary(
            &features,
            &rows,
            &mut diversity_rng(config.rng_seed),
            &config.diversity.protocol,
            &prepared.extractor.id(),
        )
        .map_err(CampaignError::Diversity)?;
        Some(scores)
    };
    let diversity_s = diversity_started.elapsed().as_secs_f64();

    let state = outcome.coverage.state();
    let report = CampaignReport {
        name: config.name.clone(),
        strategy: config.metric.kind,
        model: prepared.model_info.clone(),
        limits: config.limits,
        rng_seed: config.rng_seed,
        test_limit,
        tests_executed: outcome.tests_executed,
        iterations: outcome.iterations,
        seeds: prepared.seeds.len(),
        corpus_size: outcome.corpus.len(),
        violations: outcome.violations.len() as u64,
        per_constraint: outcome.violations.counts(),
        coverage: CoverageSummary {
            universe: state.universe(),
            covered: state.covered(),
            fraction: state.fraction(),
        },
        trajectory: outcome.trajectory.clone(),
        diversity,
        config: config.clone(),
    };
    let timings = Timings {
        profiling_s: prepared.profiling_s,
        calibration_s,
        fuzzing_s,
        diversity_s,
        total_s: started.elapsed().as_secs_f64(),
        seconds_per_test: fuzzing_s / outcome.tests_executed.max(1) as f64,
    };
    Ok(CampaignRun {
        report,
        timings,
        outcome,
    })
}

/// One violating input in `violations/manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub test_index: u64,
    pub sha256: String,
    pub origin: Origin,
    pub flags: ViolationFlags,
    pub ic: f64,
    pub ae: f64,
    pub max_pi: f64,
    pub max_cd: f64,
    /// Electrodes whose PI proportion exceeds 1.
    pub pi_electrodes: Vec<usize>,
    /// Electrodes whose CD proportion exceeds 1.
    pub cd_electrodes: Vec<usize>,
}

fn max(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

fn over_limit(values: &[f64]) -> Vec<usize> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > 1.0)
        .map(|(i, _)| i)
        .collect()
}

pub fn manifest(entries: &[ViolationEntry]) -> Vec<ManifestEntry> {
    entries
        .iter()
        .map(|e| ManifestEntry {
            file: format!("v{:06}.pgm", e.test_index),
            test_index: e.test_index,
            sha256: e.image.fingerprint(),
            origin: e.origin,
            flags: e.report.flags(),
            ic: e.report.ic,
            ae: e.report.ae,
            max_pi: max(&e.report.pi),
            max_cd: max(&e.report.cd),
            pi_electrodes: over_limit(&e.report.pi),
            cd_electrodes: over_limit(&e.report.cd),
        })
        .collect()
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CampaignError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_artifacts(dir: &Path, run: &CampaignRun) -> Result<(), CampaignError> {
    let vdir = dir.join("violations");
    std::fs::create_dir_all(&vdir).map_err(io_err(&vdir))?;
    write(&dir.join("report.json"), run.report.to_json())?;
    write(
        &dir.join("timings.json"),
        serde_json::to_string_pretty(&run.timings).expect("timings serialize"),
    )?;
    write(&dir.join("campaign.jsonl"), write_log(&run.outcome.log))?;
    let entries = run.outcome.violations.entries();
    let manifest = manifest(entries);
    for (m, e) in manifest.iter().zip(entries) {
        write(&vdir.join(&m.file), e.image.to_pgm())?;
    }
    write(
        &vdir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
}

/// Rebuilds a campaign from its log; see [`replay`].
pub fn replay_campaign(
    config: &CampaignConfig,
    log: &[crate::fuzzer::LogEntry],
) -> Result<ReplayOutcome, CampaignError> {
    let prepared = prepare(config)?;
    let coverage = prepared.coverage(config, config.metric)?;
    Ok(replay(prepared.target(config), prepared.seeds.clone(), coverage, log)?)
}
