//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use stimfuzz_core::coverage::{profile, universe_size, Coverage, CoverageDims, MetricConfig, MetricKind, TestRecord};
use stimfuzz_core::diversity::{
    diversity_summary, geometric_diversity, violation_space_row, violation_space_std, DiversityProtocol,
    FeatureExtractor,
};
use stimfuzz_core::fixtures::{
    cortical_tiny, planted_retinal, profiling_images, seed_images, PlantedParams, PROFILING_COUNT, PROFILING_SEED,
};
use stimfuzz_core::fuzzer::{
    choose_seed, fuzz, random_image, replay, seed_weight, Corpus, FuzzConfig, FuzzOutcome, Target,
};
use stimfuzz_core::image::ImageTensor;
use stimfuzz_core::model::{ModelGraph, StimulationPattern};
use stimfuzz_core::mutation::{random_mutation, MutationConfig};
use stimfuzz_core::safety::{evaluate, SafetyLimits};

struct Outcome {
    name: &'static str,
    failures: Vec<String>,
    elapsed: Duration,
}

fn criterion(name: &'static str, f: impl FnOnce(&mut Vec<String>)) -> Outcome {
    let started = Instant::now();
    let mut failures = Vec::new();
    f(&mut failures);
    Outcome {
        name,
        failures,
        elapsed: started.elapsed(),
    }
}

fn check(failures: &mut Vec<String>, ok: bool, msg: impl FnOnce() -> String) {
    if !ok {
        failures.push(msg());
    }
}

fn seeds() -> Vec<ImageTensor> {
    seed_images().into_iter().map(|(_, img)| img).collect()
}

// ---------------------------------------------------------------------------

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6 * b.abs().max(1e-300) || a == b
}

fn constraint_oracle(failures: &mut Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let presets = [SafetyLimits::retinal(), SafetyLimits::cortical()];
    for case in 0..10_000 {
        let n = rng.random_range(1..=300);
        let mut limits = presets[case % 2];
        limits.activity_epsilon_ua = if rng.random_bool(0.5) {
            0.0
        } else {
            rng.random_range(0.0..50.0)
        };
        let triples: Vec<(f32, f32, f32)> = (0..n)
            .map(|_| {
                let f = rng.random_range(0.5f32..600.0);
                let p = rng.random_range(0.01f32..6.0);
                let a = if rng.random_bool(0.3) {
                    0.0
                } else {
                    rng.random_range(0.0f32..400.0)
                };
                (f, p, a)
            })
            .collect();
        let pattern = StimulationPattern::from_triples(&triples);
        let report = match evaluate(&pattern, &limits) {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("case {case}: valid pattern rejected: {e}"));
                continue;
            }
        };

        // Scalar reimplementation.
        let mut total = 0.0f64;
        let mut active = 0usize;
        let mut any = false;
        for (i, &(f, p, a)) in triples.iter().enumerate() {
            let (f, p, a) = (f as f64, p as f64, a as f64);
            let pi = 2.0 * p * f / 1000.0;
            let cd = p * a / limits.charge_limit_nc;
            total += a;
            if a > limits.activity_epsilon_ua {
                active += 1;
            }
            any |= pi > 1.0 || cd > 1.0;
            if !rel_close(report.pi[i], pi) || !rel_close(report.cd[i], cd) {
                failures.push(format!(
                    "case {case} electrode {i}: PI {} vs {pi}, CD {} vs {cd}",
                    report.pi[i], report.cd[i]
                ));
            }
        }
        let ic = total / limits.current_limit_ua;
        let ae = active as f64 / limits.active_limit;
        any |= ic > 1.0 || ae > 1.0;
        let flags = report.flags();
        let pi_flag = triples
            .iter()
            .any(|&(f, p, _)| 2.0 * p as f64 * f as f64 / 1000.0 > 1.0);
        let cd_flag = triples
            .iter()
            .any(|&(_, p, a)| p as f64 * a as f64 / limits.charge_limit_nc > 1.0);
        if !rel_close(report.ic, ic) || !rel_close(report.ae, ae) {
            failures.push(format!(
                "case {case}: IC {} vs {ic}, AE {} vs {ae}",
                report.ic, report.ae
            ));
        }
        if flags.pi != pi_flag
            || flags.cd != cd_flag
            || flags.ic != (ic > 1.0)
            || flags.ae != (ae > 1.0)
            || report.any_violation != any
        {
            failures.push(format!("case {case}: flags {flags:?} disagree with oracle"));
        }
        if failures.len() > 10 {
            return;
        }
    }
}

// ---------------------------------------------------------------------------

fn random_records(
    model: &ModelGraph,
    limits: &SafetyLimits,
    extractor: &FeatureExtractor,
    count: usize,
) -> Vec<TestRecord> {
    let target = Target {
        model,
        limits,
        extractor: Some(extractor),
    };
    let base = seeds();
    let config = MutationConfig::default();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
            let image = match i % 3 {
                0 => random_image(15, 15, rng.random()),
                1 => ImageTensor::filled(15, 15, rng.random_range(0.0..=1.0)),
                _ => {
                    let parent = &base[i % base.len()];
                    random_mutation(parent, &mut rng, &config, 0, 0).expect("mutation").0
                }
            };
            target.execute(image, true, true).expect("execute")
        })
        .collect()
}

fn coverage_correctness(failures: &mut Vec<String>) {
    let model = planted_retinal(&PlantedParams::default());
    let limits = SafetyLimits::retinal();
    let extractor = FeatureExtractor::Pool8;
    let profiling = profiling_images(PROFILING_COUNT, PROFILING_SEED);
    let records = random_records(&model, &limits, &extractor, 1000);
    let dims = CoverageDims::of_model(&model, 64);

    for kind in MetricKind::ALL {
        let stats = kind
            .profile_space()
            .map(|space| profile(&model, &profiling, space, Some(&extractor)).expect("profile"));
        let fresh = Coverage::new(MetricConfig::new(kind), dims.clone(), stats).expect("coverage");

        let mut incremental = fresh.clone();
        let mut last = incremental.fraction();
        for (i, record) in records.iter().enumerate() {
            let newly = incremental.observe(record).expect("observe");
            let now = incremental.fraction();
            if !(0.0..=1.0).contains(&now) || now < last || (newly > 0) != (now > last) {
                failures.push(format!("{kind}: record {i}: newly {newly}, fraction {last} -> {now}"));
                break;
            }
            last = now;
        }

        let mut all_items = Vec::new();
        for record in records.iter().rev() {
            all_items.extend(fresh.items(record).expect("items"));
        }
        let mut recomputed = fresh.clone();
        recomputed.mark(&all_items);
        if incremental.state() != recomputed.state() {
            failures.push(format!(
                "{kind}: incremental covers {} items, recomputation {}",
                incremental.state().covered(),
                recomputed.state().covered()
            ));
        }
    }
}

// ---------------------------------------------------------------------------

fn universe_arithmetic(failures: &mut Vec<String>) {
    let retinal = planted_retinal(&PlantedParams::default());
    let cortical = cortical_tiny(7);
    let rdims = CoverageDims::of_model(&retinal, 64);
    let cdims = CoverageDims::of_model(&cortical, 64);
    let k = 10;
    check(failures, rdims.electrodes == 225, || {
        format!("retinal electrodes {}", rdims.electrodes)
    });
    let kmvp = universe_size(&MetricConfig::new(MetricKind::Kmvp), &rdims);
    check(failures, kmvp == 4520, || {
        format!("VO-KMVP universe {kmvp}, expected 4520")
    });
    let kmoc_r = universe_size(&MetricConfig::new(MetricKind::Kmoc), &rdims);
    check(failures, kmoc_r == 675 * k, || {
        format!("retinal VO-KMOC universe {kmoc_r}, expected {}", 675 * k)
    });
    let kmoc_c = universe_size(&MetricConfig::new(MetricKind::Kmoc), &cdims);
    check(failures, kmoc_c == 60 * k, || {
        format!("cortical VO-KMOC universe {kmoc_c}, expected {}", 60 * k)
    });
}

// ---------------------------------------------------------------------------

fn scheduler(failures: &mut Vec<String>) {
    for (gamma, p_min) in [(20.0, 0.1), (30.0, 0.2), (10.0, 0.5)] {
        check(failures, seed_weight(0, gamma, p_min) == 1.0, || {
            format!("weight(0) != 1 for gamma {gamma}")
        });
        let floor_g = (gamma * (1.0 - p_min)).round() as u64;
        let at = seed_weight(floor_g, gamma, p_min);
        let before = seed_weight(floor_g - 1, gamma, p_min);
        check(failures, (at - p_min).abs() < 1e-12 && before > p_min + 1e-12, || {
            format!(
                "gamma {gamma}, p_min {p_min}: weight({floor_g}) = {at}, weight({}) = {before}",
                floor_g - 1
            )
        });
        check(failures, seed_weight(floor_g + 7, gamma, p_min) == p_min, || {
            "weight below floor".into()
        });
    }

    let (gamma, p_min) = (20.0, 0.1);
    let gs = [0u64, 3, 9, 15, 18, 40];
    let mut corpus = Corpus::from_images(
        (0..gs.len())
            .map(|i| ImageTensor::filled(2, 2, i as f32 / 10.0))
            .collect(),
    );
    for (i, &g) in gs.iter().enumerate() {
        corpus.get_mut(i).g = g;
    }
    let weights: Vec<f64> = gs.iter().map(|&g| seed_weight(g, gamma, p_min)).collect();
    let total: f64 = weights.iter().sum();
    let draws = 10_000;
    let mut counts = vec![0u64; gs.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..draws {
        let id = choose_seed(&mut corpus, &mut rng, gamma, p_min).expect("choose");
        counts[id] += 1;
        corpus.get_mut(id).g = gs[id];
    }
    for (i, &c) in counts.iter().enumerate() {
        let p = weights[i] / total;
        let expected = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        check(failures, (c as f64 - expected).abs() <= 3.0 * sigma, || {
            format!(
                "entry {i} (g={}): {c} draws, expected {expected:.1} ± {:.1}",
                gs[i],
                3.0 * sigma
            )
        });
    }
}

// ---------------------------------------------------------------------------

fn run(
    model: &ModelGraph,
    kind: MetricKind,
    rng_seed: u64,
    test_limit: u64,
    stats: &HashMap<MetricKind, stimfuzz_core::coverage::ProfilingStats>,
) -> (Coverage, FuzzOutcome) {
    let limits = SafetyLimits::retinal();
    let extractor = FeatureExtractor::Pool8;
    let target = Target {
        model,
        limits: &limits,
        extractor: Some(&extractor),
    };
    let coverage = Coverage::new(
        MetricConfig::new(kind),
        CoverageDims::of_model(model, 64),
        stats.get(&kind).cloned(),
    )
    .expect("coverage");
    let config = FuzzConfig {
        rng_seed,
        test_limit,
        ..FuzzConfig::default()
    };
    let outcome = fuzz(target, seeds(), coverage.clone(), config).expect("campaign");
    (coverage, outcome)
}

fn all_stats(model: &ModelGraph) -> HashMap<MetricKind, stimfuzz_core::coverage::ProfilingStats> {
    let profiling = profiling_images(PROFILING_COUNT, PROFILING_SEED);
    MetricKind::ALL
        .iter()
        .filter_map(|&k| {
            k.profile_space().map(|s| {
                (
                    k,
                    profile(model, &profiling, s, Some(&FeatureExtractor::Pool8)).expect("profile"),
                )
            })
        })
        .collect()
}

fn algorithm_fidelity(failures: &mut Vec<String>) {
    let model = planted_retinal(&PlantedParams::default());
    let stats = all_stats(&model);
    let limits = SafetyLimits::retinal();
    let extractor = FeatureExtractor::Pool8;
    let target = Target {
        model: &model,
        limits: &limits,
        extractor: Some(&extractor),
    };
    let seed_count = seeds().len() as u64;
    for kind in MetricKind::ALL {
        let (coverage, outcome) = run(&model, kind, 3, 997, &stats);
        let m = FuzzConfig::default().m as u64;
        if outcome.tests_executed != seed_count + outcome.iterations * m
            || outcome.log.len() as u64 != outcome.tests_executed
        {
            failures.push(format!(
                "{kind}: {} tests, {} log lines, expected {} + {}·{m}",
                outcome.tests_executed,
                outcome.log.len(),
                seed_count,
                outcome.iterations
            ));
            continue;
        }
        if outcome.tests_executed < 997 || outcome.tests_executed >= 997 + m {
            failures.push(format!("{kind}: {} tests for a budget of 997", outcome.tests_executed));
        }
        let text = stimfuzz_core::fuzzer::write_log(&outcome.log);
        let log = stimfuzz_core::fuzzer::read_log(&text).expect("log parses");
        if stimfuzz_core::fuzzer::write_log(&log) != text {
            failures.push(format!("{kind}: log does not round-trip byte-identically"));
        }
        match replay(target, seeds(), coverage, &log) {
            Err(e) => failures.push(format!("{kind}: replay failed: {e}")),
            Ok(r) => {
                let corpus_a: Vec<String> = outcome.corpus.entries().iter().map(|e| e.image.fingerprint()).collect();
                let corpus_b: Vec<String> = r.corpus.entries().iter().map(|e| e.image.fingerprint()).collect();
                let viol_a: Vec<(u64, String)> = outcome
                    .violations
                    .entries()
                    .iter()
                    .map(|e| (e.test_index, e.image.fingerprint()))
                    .collect();
                let viol_b: Vec<(u64, String)> = r
                    .violations
                    .entries()
                    .iter()
                    .map(|e| (e.test_index, e.image.fingerprint()))
                    .collect();
                check(failures, corpus_a == corpus_b, || {
                    format!("{kind}: replayed corpus differs")
                });
                check(failures, viol_a == viol_b, || {
                    format!("{kind}: replayed violations differ")
                });
                check(failures, outcome.coverage.state() == &r.coverage, || {
                    format!("{kind}: replayed coverage differs")
                });
            }
        }
    }
}

// ---------------------------------------------------------------------------

struct Pilot {
    violations: HashMap<(MetricKind, u64), usize>,
    vd: HashMap<(MetricKind, u64), f64>,
}

const RNG_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn pilot(model: &ModelGraph) -> Pilot {
    let stats = all_stats(model);
    let jobs: Vec<(MetricKind, u64)> = MetricKind::ALL
        .iter()
        .flat_map(|&k| RNG_SEEDS.iter().map(move |&s| (k, s)))
        .collect();
    let results: Vec<((MetricKind, u64), usize, f64)> = jobs
        .par_iter()
        .map(|&(kind, seed)| {
            let (_, outcome) = run(model, kind, seed, 5000, &stats);
            let entries = outcome.violations.entries();
            let vd = if entries.is_empty() {
                0.0
            } else {
                let features: Vec<Vec<f32>> = entries
                    .iter()
                    .map(|e| FeatureExtractor::Pool8.extract(&e.image).unwrap())
                    .collect();
                let rows: Vec<Vec<f64>> = entries
                    .iter()
                    .map(|e| violation_space_row(&e.report, &e.pattern).unwrap())
                    .collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                diversity_summary(
                    &features,
                    &rows,
                    &mut rng,
                    &DiversityProtocol::default(),
                    "builtin:pool8",
                )
                .unwrap()
                .vd_std
            };
            ((kind, seed), entries.len(), vd)
        })
        .collect();
    let mut p = Pilot {
        violations: HashMap::new(),
        vd: HashMap::new(),
    };
    for (key, v, vd) in results {
        p.violations.insert(key, v);
        p.vd.insert(key, vd);
    }
    p
}

fn effectiveness(failures: &mut Vec<String>) {
    let model = planted_retinal(&PlantedParams::default());
    let p = pilot(&model);
    for kind in [MetricKind::Kmvp, MetricKind::Kmoc] {
        for s in RNG_SEEDS {
            let (v, b) = (p.violations[&(kind, s)], p.violations[&(MetricKind::BasicNone, s)]);
            check(failures, v > b, || {
                format!("rng seed {s}: {kind} found {v}, B-N found {b}")
            });
        }
    }
    let mean = |map: &HashMap<(MetricKind, u64), f64>, k: MetricKind| {
        RNG_SEEDS.iter().map(|s| map[&(k, *s)]).sum::<f64>() / 5.0
    };
    let counts: HashMap<(MetricKind, u64), f64> = p.violations.iter().map(|(k, v)| (*k, *v as f64)).collect();
    let local_v = mean(&counts, MetricKind::BasicLocal);
    let local_vd = mean(&p.vd, MetricKind::BasicLocal);
    for kind in MetricKind::ALL.into_iter().filter(|k| *k != MetricKind::BasicLocal) {
        let (v, vd) = (mean(&counts, kind), mean(&p.vd, kind));
        check(failures, local_v > v, || {
            format!("mean violations: B-Local {local_v:.1}, {kind} {v:.1}")
        });
        check(failures, local_vd < vd, || {
            format!("mean VD: B-Local {local_vd:.2}, {kind} {vd:.2}")
        });
    }
}

fn model_comparison(failures: &mut Vec<String>) {
    let plain = planted_retinal(&PlantedParams::default());
    let twin = planted_retinal(&PlantedParams::regularized());
    let (plain_stats, twin_stats) = (all_stats(&plain), all_stats(&twin));
    for kind in [MetricKind::Kmvp, MetricKind::Kmoc, MetricKind::BasicNone] {
        for s in RNG_SEEDS {
            let a = run(&plain, kind, s, 5000, &plain_stats).1.violations.counts().cd;
            let b = run(&twin, kind, s, 5000, &twin_stats).1.violations.counts().cd;
            check(failures, b < a, || {
                format!("{kind} rng seed {s}: V_CD twin {b}, unregularized {a}")
            });
        }
    }
}

// ---------------------------------------------------------------------------

fn diversity_math(failures: &mut Vec<String>) {
    let eye: Vec<Vec<f64>> = (0..4)
        .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let gd = geometric_diversity(&eye).unwrap();
    check(failures, gd.abs() < 1e-12, || format!("GD of orthonormal rows {gd}"));
    let gd = geometric_diversity(&[vec![0.3, 0.4], vec![0.3, 0.4]]).unwrap();
    check(failures, gd == f64::NEG_INFINITY, || {
        format!("GD of duplicate rows {gd}")
    });
    let gd = geometric_diversity(&[vec![3.0, 4.0]]).unwrap();
    check(failures, (gd - 25f64.ln()).abs() < 1e-12, || {
        format!("GD of (3,4) is {gd}, expected ln 25")
    });

    let vd = violation_space_std(&vec![vec![0.5, 1.5, 20.0]; 3]).unwrap();
    check(failures, vd == 0.0, || format!("VD of identical rows {vd}"));
    let vd = violation_space_std(&[vec![0.0], vec![2.0]]).unwrap();
    check(failures, (vd - 1.0).abs() < 1e-12, || format!("VD of {{0,2}} is {vd}"));

    let protocol = DiversityProtocol::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (n, expect_subsampled) in [(199usize, false), (200, true), (450, true)] {
        let features: Vec<Vec<f32>> = (0..n).map(|_| (0..8).map(|_| rng.random()).collect()).collect();
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random()).collect()).collect();
        let s = diversity_summary(&features, &rows, &mut rng, &protocol, "test").unwrap();
        let subsampled = !s.full_set_fallback && s.subsets == 5 && s.subset_size == 200;
        let full = s.full_set_fallback && s.subsets == 1 && s.subset_size == n;
        check(failures, if expect_subsampled { subsampled } else { full }, || {
            format!(
                "n = {n}: subsets {}, size {}, fallback {}",
                s.subsets, s.subset_size, s.full_set_fallback
            )
        });
    }
}

// ---------------------------------------------------------------------------

fn main() {
    let limits: [(&str, Option<Duration>); 8] = [
        (
            "constraint oracle equivalence (10,000 patterns)",
            Some(Duration::from_secs(5)),
        ),
        (
            "coverage incremental = recomputation (15 metrics, 1,000 records)",
            Some(Duration::from_secs(60)),
        ),
        ("universe arithmetic (KMVP 4,520; KMOC 675K / 60K)", None),
        ("scheduler weights and selection ratios", None),
        ("test accounting and log replay", None),
        (
            "effectiveness direction (15 strategies x 5 seeds x 5,000 tests)",
            Some(Duration::from_secs(600)),
        ),
        ("clamp-regularized twin has fewer CD violations", None),
        ("diversity math", None),
    ];
    let bodies: [fn(&mut Vec<String>); 8] = [
        constraint_oracle,
        coverage_correctness,
        universe_arithmetic,
        scheduler,
        algorithm_fidelity,
        effectiveness,
        model_comparison,
        diversity_math,
    ];
    let mut failed = 0;
    for ((name, limit), body) in limits.into_iter().zip(bodies) {
        let mut outcome = criterion(name, body);
        if let Some(limit) = limit {
            if outcome.elapsed > limit {
                outcome
                    .failures
                    .push(format!("took {:.1?}, limit {limit:?}", outcome.elapsed));
            }
        }
        let status = if outcome.failures.is_empty() { "PASS" } else { "FAIL" };
        println!("{status} {} ({:.2?})", outcome.name, outcome.elapsed);
        for f in outcome.failures.iter().take(10) {
            println!("     {f}");
        }
        failed += !outcome.failures.is_empty() as usize;
    }
    println!("acceptance: {} passed, {failed} failed", limits.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
