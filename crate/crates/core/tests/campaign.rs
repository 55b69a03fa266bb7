use std::path::Path;

use stimfuzz_core::campaign::{replay_campaign, run_campaign, write_artifacts, CampaignError, ManifestEntry};
use stimfuzz_core::config::{BudgetMode, CampaignConfig};
use stimfuzz_core::coverage::{profile, MetricKind, ProfileSpace};
use stimfuzz_core::fixtures::{campaign_toml, planted_retinal, profiling_images, write_workspace, PlantedParams};
use stimfuzz_core::fuzzer::read_log;
use stimfuzz_core::report::{breakdown, breakdown_csv, compare, CampaignReport, ReportError};

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_workspace(dir.path()).unwrap();
    dir
}

fn config(dir: &Path, model: &str, strategy: &str, tests: u64, seed: u64) -> CampaignConfig {
    CampaignConfig::from_toml(&campaign_toml(model, strategy, tests, seed), dir).unwrap()
}

#[test]
fn identical_configs_give_identical_reports() {
    let ws = workspace();
    let cfg = config(ws.path(), "planted-retinal.nef", "VO-KMVP", 400, 9);
    let a = run_campaign(&cfg).unwrap();
    let b = run_campaign(&cfg).unwrap();
    assert_eq!(a.report.to_json(), b.report.to_json());
    assert_eq!(a.report.tests_executed, 6 + 10 * a.report.iterations);
    assert!(a.report.violations > 0);
    let c = a.report.per_constraint;
    assert!([c.pi, c.cd, c.ic, c.ae].iter().filter(|&&v| v > 0).count() >= 2);
    assert!([c.pi, c.cd, c.ic, c.ae].iter().all(|&v| v <= a.report.tests_executed));
    assert!(a
        .report
        .trajectory
        .windows(2)
        .all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
    assert_eq!(a.report.coverage.universe, 4520);
    let parsed = CampaignReport::from_json(&a.report.to_json()).unwrap();
    assert_eq!(parsed.to_json(), a.report.to_json());
}

#[test]
fn artifacts_are_written_and_replayable() {
    let ws = workspace();
    let cfg = config(ws.path(), "planted-retinal.nef", "VO-KMOC", 300, 2);
    let run = run_campaign(&cfg).unwrap();
    let out = ws.path().join("out");
    write_artifacts(&out, &run).unwrap();

    for f in [
        "report.json",
        "timings.json",
        "campaign.jsonl",
        "violations/manifest.json",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let manifest: Vec<ManifestEntry> =
        serde_json::from_str(&std::fs::read_to_string(out.join("violations/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.len() as u64, run.report.violations);
    for m in &manifest {
        assert!(out.join("violations").join(&m.file).is_file());
        assert!(m.flags.any());
    }

    let log = read_log(&std::fs::read_to_string(out.join("campaign.jsonl")).unwrap()).unwrap();
    assert_eq!(log.len() as u64, run.report.tests_executed);
    let replayed = replay_campaign(&cfg, &log).unwrap();
    assert_eq!(replayed.violations.len() as u64, run.report.violations);
    assert_eq!(&replayed.coverage, run.outcome.coverage.state());
}

#[test]
fn saved_profiling_stats_are_reused() {
    let ws = workspace();
    let model = planted_retinal(&PlantedParams::default());
    let stats = profile(&model, &profiling_images(200, 42), ProfileSpace::Outputs, None).unwrap();
    stats.save(&ws.path().join("stats.json")).unwrap();
    let text = campaign_toml("planted-retinal.nef", "VO-KMOC", 200, 4)
        .replace("profiling_data = \"profiling\"", "profiling_stats = \"stats.json\"");
    let from_stats = CampaignConfig::from_toml(&text, ws.path()).unwrap();
    let from_data = config(ws.path(), "planted-retinal.nef", "VO-KMOC", 200, 4);
    let a = run_campaign(&from_stats).unwrap().report;
    let b = run_campaign(&from_data).unwrap().report;
    assert_eq!(a.violations, b.violations);
    assert_eq!(a.coverage, b.coverage);
}

#[test]
fn safe_encoder_finds_nothing() {
    let ws = workspace();
    let run = run_campaign(&config(ws.path(), "null-encoder.nef", "B-N", 200, 1)).unwrap();
    assert_eq!(run.report.violations, 0);
    assert!(run.report.diversity.is_none());
}

#[test]
fn missing_seeds_are_reported() {
    let ws = workspace();
    let mut cfg = config(ws.path(), "planted-retinal.nef", "B-N", 100, 1);
    cfg.seeds_path = "nowhere".into();
    assert!(matches!(run_campaign(&cfg), Err(CampaignError::Seeds(_))));
}

#[test]
fn equal_time_budget_is_calibrated() {
    let ws = workspace();
    let mut cfg = config(ws.path(), "planted-retinal.nef", "N-NC", 200, 1);
    cfg.budget.mode = BudgetMode::EqualTime;
    cfg.budget.calibration_tests = 50;
    let run = run_campaign(&cfg).unwrap();
    assert!(run.report.test_limit >= 1);
    assert!(run.report.tests_executed >= run.report.test_limit);
    assert!(run.timings.calibration_s > 0.0);
}

#[test]
fn comparison_and_breakdown() {
    let ws = workspace();
    let reports: Vec<(String, CampaignReport)> = ["B-N", "VO-KMVP", "B-Local"]
        .iter()
        .map(|s| {
            let r = run_campaign(&config(ws.path(), "planted-retinal.nef", s, 500, 1))
                .unwrap()
                .report;
            (s.to_string(), r)
        })
        .collect();
    let table = compare(&reports).unwrap();
    assert_eq!(table.rows.len(), 3);
    assert!(table.rows.windows(2).all(|w| w[0].combined >= w[1].combined));
    let zsum: f64 = table.rows.iter().map(|r| r.z_violations).sum();
    assert!(zsum.abs() < 1e-9);
    assert!(table.to_csv().starts_with("label,"));

    let mut reversed = reports.clone();
    reversed.reverse();
    assert_eq!(compare(&reversed).unwrap(), table);
    assert!(compare(&reports[..1]).is_err());

    // Breakdown wants one strategy across models.
    assert!(matches!(breakdown(&reports), Err(ReportError::Incomparable(_))));
    let twins: Vec<(String, CampaignReport)> = ["planted-retinal.nef", "planted-retinal-clamped.nef"]
        .iter()
        .map(|m| {
            (
                m.to_string(),
                run_campaign(&config(ws.path(), m, "VO-KMVP", 500, 1)).unwrap().report,
            )
        })
        .collect();
    let rows = breakdown(&twins).unwrap();
    assert_eq!(rows[1].counts.cd, 0);
    assert!(rows[0].counts.cd > 0);
    assert_eq!(breakdown_csv(&rows).lines().count(), 3);
    assert_eq!(rows[0].strategy, MetricKind::Kmvp);

    let mut other = twins.clone();
    other[1].1.test_limit = 1000;
    assert!(breakdown(&other).is_err());
}
