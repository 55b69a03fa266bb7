//! The fuzzing loop.
//!
//! Each iteration picks one corpus entry, derives `m` mutants from it, runs
//! them through the encoder and the safety checks, records violations, and
//! admits mutants that strictly grow coverage. Initial seeds count against the
//! test budget and seed the coverage state, but are not themselves reported
//! as violations.
//!
//! Forward passes within an iteration run in parallel; their results are
//! merged in mutant order, so a campaign is a pure function of its inputs and
//! RNG seed. Every executed test appends a [`LogEntry`]; [`replay`] re-executes
//! a log without any RNG and checks that it reproduces the campaign.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coverage::{Coverage, CoverageError, CoverageState, MetricKind, TestRecord};
use crate::diversity::{DiversityError, FeatureExtractor};
use crate::image::ImageTensor;
use crate::model::{decode_stimulation, ModelError, ModelGraph, StimulationPattern};
use crate::mutation::{apply_unchecked, random_mutation, MutationConfig, MutationError, MutationRecord};
use crate::safety::{evaluate, SafetyError, SafetyLimits, ViolationFlags, ViolationReport};

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
    #[error(transparent)]
    Features(#[from] DiversityError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
}

#[derive(Debug, thiserror::Error)]
pub enum FuzzError {
    #[error("seed set is empty")]
    EmptyCorpus,
    #[error("invalid fuzzing configuration: {0}")]
    Config(String),
    #[error("test {test_index} ({origin}): {source}")]
    Test {
        test_index: u64,
        origin: String,
        #[source]
        source: ExecError,
    },
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error("{0} requires a feature extractor")]
    MissingExtractor(MetricKind),
    #[error("invalid timing: {0}")]
    Timing(String),
    #[error("replay diverged at test {test_index}: {what}")]
    ReplayMismatch { test_index: u64, what: String },
}

/// Selection weight of a seed chosen `g` times before: `max(1 - g/γ, p_min)`.
pub fn seed_weight(g: u64, gamma: f64, p_min: f64) -> f64 {
    (1.0 - g as f64 / gamma).max(p_min)
}

/// Where a test input came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Origin {
    /// Initial seed image.
    Seed,
    Mutation(MutationRecord),
    /// Uniform-random image generated from its own seed.
    Random {
        image_seed: u64,
        draw_index: u64,
    },
}

impl std::fmt::Display for Origin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Origin::Seed => f.write_str("initial seed"),
            Origin::Mutation(r) => write!(f, "{:?} of corpus entry {}", r.params.kind(), r.parent_id),
            Origin::Random { image_seed, .. } => write!(f, "random image {image_seed}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedEntry {
    pub id: usize,
    pub image: ImageTensor,
    pub origin: Origin,
    /// Times selected.
    pub g: u64,
    /// Violating mutants derived from this entry.
    pub violation_yield: u64,
    /// Mutants derived from this entry.
    pub mutants: u64,
}

/// The seed set, in insertion order; ids are indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    entries: Vec<SeedEntry>,
}

impl Corpus {
    pub fn from_images(images: Vec<ImageTensor>) -> Self {
        let mut c = Self::default();
        for img in images {
            c.push(img, Origin::Seed);
        }
        c
    }

    pub fn push(&mut self, image: ImageTensor, origin: Origin) -> usize {
        let id = self.entries.len();
        self.entries.push(SeedEntry {
            id,
            image,
            origin,
            g: 0,
            violation_yield: 0,
            mutants: 0,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: usize) -> &SeedEntry {
        &self.entries[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut SeedEntry {
        &mut self.entries[id]
    }

    pub fn entries(&self) -> &[SeedEntry] {
        &self.entries
    }
}

/// Weighted draw over the corpus; increments the chosen entry's `g`.
pub fn choose_seed<R: Rng + ?Sized>(
    corpus: &mut Corpus,
    rng: &mut R,
    gamma: f64,
    p_min: f64,
) -> Result<usize, FuzzError> {
    if corpus.is_empty() {
        return Err(FuzzError::EmptyCorpus);
    }
    let weights: Vec<f64> = corpus.entries.iter().map(|e| seed_weight(e.g, gamma, p_min)).collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| FuzzError::Config(format!("seed weights: {e}")))?;
    let id = dist.sample(rng);
    corpus.entries[id].g += 1;
    Ok(id)
}

/// Entry with the highest violation yield, ties to the lowest id; `None` if all yields are zero.
pub fn most_productive_seed(corpus: &Corpus) -> Option<usize> {
    let mut best: Option<&SeedEntry> = None;
    for e in &corpus.entries {
        if e.violation_yield > 0 && best.map_or(true, |b| e.violation_yield > b.violation_yield) {
            best = Some(e);
        }
    }
    best.map(|e| e.id)
}

/// `floor(baseline_limit × baseline_per_test / strategy_per_test)`, at least 1.
pub fn budget_for_strategy(
    baseline_per_test: f64,
    strategy_per_test: f64,
    baseline_limit: u64,
) -> Result<u64, FuzzError> {
    for (name, t) in [("baseline", baseline_per_test), ("strategy", strategy_per_test)] {
        if !(t.is_finite() && t > 0.0) {
            return Err(FuzzError::Timing(format!(
                "{name} time per test must be positive, got {t}"
            )));
        }
    }
    let limit = (baseline_limit as f64 * baseline_per_test / strategy_per_test).floor();
    Ok((limit as u64).max(1))
}

/// A unique violating input and everything needed to audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationEntry {
    pub test_index: u64,
    pub image: ImageTensor,
    pub origin: Origin,
    pub report: ViolationReport,
    pub pattern: StimulationPattern,
}

/// Violations deduplicated by exact image bytes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ViolationSet {
    entries: Vec<ViolationEntry>,
    keys: HashSet<Vec<u32>>,
}

impl ViolationSet {
    /// Records a violation; returns false for a duplicate image.
    pub fn insert(&mut self, entry: ViolationEntry) -> bool {
        debug_assert!(entry.report.any_violation);
        if self.keys.insert(entry.image.bit_key()) {
            self.entries.push(entry);
            true
        } else {
            false
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ViolationEntry] {
        &self.entries
    }

    /// Unique violating inputs that violate each constraint.
    pub fn counts(&self) -> ConstraintCounts {
        let mut c = ConstraintCounts::default();
        for e in &self.entries {
            let f = e.report.flags();
            c.pi += f.pi as u64;
            c.cd += f.cd as u64;
            c.ic += f.ic as u64;
            c.ae += f.ae as u64;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintCounts {
    #[serde(rename = "PI")]
    pub pi: u64,
    #[serde(rename = "CD")]
    pub cd: u64,
    #[serde(rename = "IC")]
    pub ic: u64,
    #[serde(rename = "AE")]
    pub ae: u64,
}

/// One line of the campaign log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub test_index: u64,
    /// Corpus entry the test was derived from; `None` for initial seeds and random images.
    pub seed_id: Option<usize>,
    pub origin: Origin,
    pub flags: ViolationFlags,
    /// First occurrence of this violating image.
    pub new_violation: bool,
    pub newly_covered: usize,
    /// Coverage fraction after this test.
    pub coverage: f64,
    pub admitted: bool,
}

/// Campaign parameters independent of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub m: usize,
    pub test_limit: u64,
    pub gamma: f64,
    pub p_min: f64,
    pub rng_seed: u64,
    pub mutation: MutationConfig,
    /// Transforms used by B-Local.
    pub local_mutation: MutationConfig,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self {
            m: 10,
            test_limit: 5000,
            gamma: 20.0,
            p_min: 0.1,
            rng_seed: 0,
            mutation: MutationConfig::default(),
            local_mutation: MutationConfig::local(),
        }
    }
}

impl FuzzConfig {
    pub fn validate(&self, seeds: usize) -> Result<(), FuzzError> {
        let bad = |s: String| Err(FuzzError::Config(s));
        if self.m == 0 {
            return bad("m must be >= 1".into());
        }
        if self.test_limit < seeds as u64 {
            return bad(format!(
                "test_limit {} is below the seed count {seeds}",
                self.test_limit
            ));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return bad(format!("gamma must be > 0, got {}", self.gamma));
        }
        if !(self.p_min > 0.0 && self.p_min < 1.0) {
            return bad(format!("p_min must lie in (0, 1), got {}", self.p_min));
        }
        self.mutation.validate()?;
        self.local_mutation.validate()?;
        Ok(())
    }
}

/// Model, limits, and optional feature extractor shared by every test.
#[derive(Clone, Copy)]
pub struct Target<'a> {
    pub model: &'a ModelGraph,
    pub limits: &'a SafetyLimits,
    pub extractor: Option<&'a FeatureExtractor>,
}

impl Target<'_> {
    /// Runs one input through the encoder and the safety checks.
    pub fn execute(&self, image: ImageTensor, trace: bool, features: bool) -> Result<TestRecord, ExecError> {
        let (raw, trace) = self.model.forward(&image, trace)?;
        let pattern = decode_stimulation(&raw, self.model.layout())?;
        let report = evaluate(&pattern, self.limits)?;
        let features = match (features, self.extractor) {
            (true, Some(x)) => Some(x.extract(&image)?),
            _ => None,
        };
        Ok(TestRecord {
            image,
            raw,
            pattern,
            report,
            trace,
            features,
        })
    }
}

/// Image with i.i.d. uniform pixels, a pure function of `seed`.
pub fn random_image(height: usize, width: usize, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..height * width).map(|_| rng.random::<f32>()).collect();
    ImageTensor::from_clamped(height, width, pixels)
}

/// Result of a finished campaign.
#[derive(Debug, Clone)]
pub struct FuzzOutcome {
    pub corpus: Corpus,
    pub violations: ViolationSet,
    pub coverage: Coverage,
    pub log: Vec<LogEntry>,
    pub tests_executed: u64,
    pub iterations: u64,
    /// `(tests executed, coverage fraction)` after initialization and after every iteration.
    pub trajectory: Vec<(u64, f64)>,
}

/// Campaign state between iterations.
pub struct Fuzzer<'a> {
    target: Target<'a>,
    config: FuzzConfig,
    coverage: Coverage,
    corpus: Corpus,
    violations: ViolationSet,
    rng: ChaCha8Rng,
    tests: u64,
    iterations: u64,
    log: Vec<LogEntry>,
    trajectory: Vec<(u64, f64)>,
}

impl<'a> Fuzzer<'a> {
    /// Executes the seeds and computes their coverage.
    pub fn new(
        target: Target<'a>,
        seeds: Vec<ImageTensor>,
        coverage: Coverage,
        config: FuzzConfig,
    ) -> Result<Self, FuzzError> {
        if seeds.is_empty() {
            return Err(FuzzError::EmptyCorpus);
        }
        config.validate(seeds.len())?;
        let kind = coverage.kind();
        if kind.needs_features() && target.extractor.is_none() {
            return Err(FuzzError::MissingExtractor(kind));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let mut fuzzer = Self {
            target,
            config,
            coverage,
            corpus: Corpus::from_images(seeds),
            violations: ViolationSet::default(),
            rng,
            tests: 0,
            iterations: 0,
            log: Vec::new(),
            trajectory: Vec::new(),
        };
        let images: Vec<ImageTensor> = fuzzer.corpus.entries.iter().map(|e| e.image.clone()).collect();
        let origins = vec![Origin::Seed; images.len()];
        let results = fuzzer.execute_batch(images, &origins);
        for (i, result) in results.into_iter().enumerate() {
            let (record, items) = result?;
            let newly = fuzzer.coverage.mark(&items);
            fuzzer.log.push(LogEntry {
                test_index: fuzzer.tests,
                seed_id: None,
                origin: Origin::Seed,
                flags: record.report.flags(),
                new_violation: false,
                newly_covered: newly,
                coverage: fuzzer.coverage.fraction(),
                admitted: false,
            });
            debug_assert_eq!(i as u64, fuzzer.tests);
            fuzzer.tests += 1;
        }
        fuzzer.trajectory.push((fuzzer.tests, fuzzer.coverage.fraction()));
        Ok(fuzzer)
    }

    pub fn tests_executed(&self) -> u64 {
        self.tests
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn violations(&self) -> &ViolationSet {
        &self.violations
    }

    pub fn coverage(&self) -> &Coverage {
        &self.coverage
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn is_done(&self) -> bool {
        self.tests >= self.config.test_limit
    }

    /// Runs iterations until the test budget is spent.
    pub fn run(mut self) -> Result<FuzzOutcome, FuzzError> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> FuzzOutcome {
        FuzzOutcome {
            corpus: self.corpus,
            violations: self.violations,
            coverage: self.coverage,
            log: self.log,
            tests_executed: self.tests,
            iterations: self.iterations,
            trajectory: self.trajectory,
        }
    }

    /// One iteration: `m` tests from one seed (or `m` random images for B-FR).
    pub fn step(&mut self) -> Result<(), FuzzError> {
        let m = self.config.m;
        let (h, w) = self.target.model.input_shape();
        let (parent, inputs): (Option<usize>, Vec<(ImageTensor, Origin)>) = match self.coverage.kind() {
            MetricKind::BasicRandom => {
                let inputs = (0..m as u64)
                    .map(|j| {
                        let image_seed = self.rng.random::<u64>();
                        let origin = Origin::Random {
                            image_seed,
                            draw_index: self.tests + j,
                        };
                        (random_image(h, w, image_seed), origin)
                    })
                    .collect();
                (None, inputs)
            }
            kind => {
                let (id, mutation) = if kind == MetricKind::BasicLocal {
                    let id = match most_productive_seed(&self.corpus) {
                        Some(id) => {
                            self.corpus.entries[id].g += 1;
                            id
                        }
                        None => choose_seed(&mut self.corpus, &mut self.rng, self.config.gamma, self.config.p_min)?,
                    };
                    (id, &self.config.local_mutation)
                } else {
                    let id = choose_seed(&mut self.corpus, &mut self.rng, self.config.gamma, self.config.p_min)?;
                    (id, &self.config.mutation)
                };
                let seed_image = &self.corpus.entries[id].image;
                let mut inputs = Vec::with_capacity(m);
                for j in 0..m as u64 {
                    let (img, record) = random_mutation(seed_image, &mut self.rng, mutation, id, self.tests + j)?;
                    inputs.push((img, Origin::Mutation(record)));
                }
                (Some(id), inputs)
            }
        };
        self.test_inputs(parent, inputs)?;
        self.iterations += 1;
        self.trajectory.push((self.tests, self.coverage.fraction()));
        Ok(())
    }

    /// Executes inputs in parallel, then merges results in input order.
    fn test_inputs(&mut self, parent: Option<usize>, inputs: Vec<(ImageTensor, Origin)>) -> Result<(), FuzzError> {
        let origins: Vec<Origin> = inputs.iter().map(|(_, o)| *o).collect();
        let images: Vec<ImageTensor> = inputs.into_iter().map(|(i, _)| i).collect();
        let results = self.execute_batch(images, &origins);
        for (result, origin) in results.into_iter().zip(origins) {
            let (record, items) = result?;
            let merged = merge(
                &mut self.coverage,
                &mut self.corpus,
                &mut self.violations,
                parent,
                origin,
                self.tests,
                record,
                &items,
            );
            self.log.push(merged);
            self.tests += 1;
        }
        Ok(())
    }

    fn execute_batch(
        &self,
        images: Vec<ImageTensor>,
        origins: &[Origin],
    ) -> Vec<Result<(TestRecord, Vec<usize>), FuzzError>> {
        execute_batch(&self.target, &self.coverage, images, origins, self.tests)
    }
}

fn execute_batch(
    target: &Target<'_>,
    coverage: &Coverage,
    images: Vec<ImageTensor>,
    origins: &[Origin],
    first_index: u64,
) -> Vec<Result<(TestRecord, Vec<usize>), FuzzError>> {
    let kind = coverage.kind();
    images
        .into_par_iter()
        .enumerate()
        .map(|(j, image)| {
            let wrap = |source: ExecError| FuzzError::Test {
                test_index: first_index + j as u64,
                origin: origins[j].to_string(),
                source,
            };
            let record = target
                .execute(image, kind.needs_trace(), kind.needs_features())
                .map_err(wrap)?;
            let items = coverage.items(&record).map_err(|e| wrap(e.into()))?;
            Ok((record, items))
        })
        .collect()
}

/// Applies one executed test to the campaign state.
#[allow(clippy::too_many_arguments)]
fn merge(
    coverage: &mut Coverage,
    corpus: &mut Corpus,
    violations: &mut ViolationSet,
    parent: Option<usize>,
    origin: Origin,
    test_index: u64,
    record: TestRecord,
    items: &[usize],
) -> LogEntry {
    let flags = record.report.flags();
    if let Some(p) = parent {
        let e = corpus.get_mut(p);
        e.mutants += 1;
        e.violation_yield += flags.any() as u64;
    }
    let newly = coverage.mark(items);
    let admitted = coverage.admits(newly);
    let image = record.image;
    if admitted {
        corpus.push(image.clone(), origin);
    }
    let new_violation = flags.any()
        && violations.insert(ViolationEntry {
            test_index,
            image,
            origin,
            report: record.report,
            pattern: record.pattern,
        });
    LogEntry {
        test_index,
        seed_id: parent,
        origin,
        flags,
        new_violation,
        newly_covered: newly,
        coverage: coverage.fraction(),
        admitted,
    }
}

/// Runs a campaign to completion.
pub fn fuzz(
    target: Target<'_>,
    seeds: Vec<ImageTensor>,
    coverage: Coverage,
    config: FuzzConfig,
) -> Result<FuzzOutcome, FuzzError> {
    Fuzzer::new(target, seeds, coverage, config)?.run()
}

/// What a replay reconstructed.
#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub corpus: Corpus,
    pub violations: ViolationSet,
    pub coverage: CoverageState,
    pub tests_executed: u64,
}

/// Re-executes a campaign log against the same target and seeds, checking
/// each test's violation flags, coverage gain and admission against the log.
///
/// Inputs are rebuilt from the logged transforms alone, so no RNG is involved.
pub fn replay(
    target: Target<'_>,
    seeds: Vec<ImageTensor>,
    coverage: Coverage,
    log: &[LogEntry],
) -> Result<ReplayOutcome, FuzzError> {
    let mut coverage = coverage.fresh();
    let kind = coverage.kind();
    let (h, w) = target.model.input_shape();
    let mut corpus = Corpus::from_images(seeds);
    let mut violations = ViolationSet::default();
    let seed_count = corpus.len();
    let mismatch = |test_index: u64, what: String| FuzzError::ReplayMismatch { test_index, what };

    for (i, entry) in log.iter().enumerate() {
        let test_index = i as u64;
        if entry.test_index != test_index {
            return Err(mismatch(
                test_index,
                format!("log entry is numbered {}", entry.test_index),
            ));
        }
        let image = match entry.origin {
            Origin::Seed => {
                if i >= seed_count {
                    return Err(mismatch(test_index, "more seed entries than seeds".into()));
                }
                corpus.get(i).image.clone()
            }
            Origin::Mutation(record) => {
                if record.parent_id >= corpus.len() || entry.seed_id != Some(record.parent_id) {
                    return Err(mismatch(test_index, format!("unknown parent {}", record.parent_id)));
                }
                apply_unchecked(&record.params, &corpus.get(record.parent_id).image)
            }
            Origin::Random { image_seed, .. } => random_image(h, w, image_seed),
        };
        let record = target
            .execute(image, kind.needs_trace(), kind.needs_features())
            .map_err(|source| FuzzError::Test {
                test_index,
                origin: entry.origin.to_string(),
                source,
            })?;
        let items = coverage.items(&record)?;
        let replayed = if entry.origin == Origin::Seed {
            let newly = coverage.mark(&items);
            LogEntry {
                test_index,
                seed_id: None,
                origin: Origin::Seed,
                flags: record.report.flags(),
                new_violation: false,
                newly_covered: newly,
                coverage: coverage.fraction(),
                admitted: false,
            }
        } else {
            merge(
                &mut coverage,
                &mut corpus,
                &mut violations,
                entry.seed_id,
                entry.origin,
                test_index,
                record,
                &items,
            )
        };
        if &replayed != entry {
            return Err(mismatch(test_index, format!("logged {entry:?}, replayed {replayed:?}")));
        }
    }
    Ok(ReplayOutcome {
        corpus,
        violations,
        coverage: coverage.state().clone(),
        tests_executed: log.len() as u64,
    })
}

/// Serializes a log as JSON lines.
pub fn write_log(log: &[LogEntry]) -> String {
    let mut out = String::new();
    for e in log {
        out.push_str(&serde_json::to_string(e).expect("log entry serializes"));
        out.push('\n');
    }
    out
}

pub fn read_log(text: &str) -> Result<Vec<LogEntry>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
