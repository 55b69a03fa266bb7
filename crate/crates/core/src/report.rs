//! Campaign reports, strategy comparison and per-constraint breakdowns.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::CampaignConfig;
use crate::coverage::MetricKind;
use crate::diversity::{extended_f64, DiversityScores};
use crate::fuzzer::ConstraintCounts;
use crate::safety::SafetyLimits;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("need at least {needed} reports, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("reports are not comparable: {0}")]
    Incomparable(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelInfo {
    /// Path as written in the config.
    pub path: String,
    /// SHA-256 of the NEF file.
    pub sha256: String,
    pub electrodes: usize,
    pub input_shape: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub universe: usize,
    pub covered: usize,
    pub fraction: f64,
}

/// Everything a campaign produced that is a function of its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub name: String,
    pub strategy: MetricKind,
    pub model: ModelInfo,
    pub limits: SafetyLimits,
    pub rng_seed: u64,
    /// Test budget the campaign ran under (after equal-time calibration, if any).
    pub test_limit: u64,
    pub tests_executed: u64,
    pub iterations: u64,
    pub seeds: usize,
    pub corpus_size: usize,
    pub violations: u64,
    pub per_constraint: ConstraintCounts,
    pub coverage: CoverageSummary,
    pub trajectory: Vec<(u64, f64)>,
    /// Absent when the campaign found no violations.
    pub diversity: Option<DiversityScores>,
    pub config: CampaignConfig,
}

impl CampaignReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Wall-clock timings, kept apart from the deterministic report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub profiling_s: f64,
    pub calibration_s: f64,
    pub fuzzing_s: f64,
    pub diversity_s: f64,
    pub total_s: f64,
    pub seconds_per_test: f64,
}

/// One row of a strategy comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub strategy: MetricKind,
    pub violations: u64,
    #[serde(with = "extended_f64")]
    pub gd_logdet: f64,
    pub vd_std: f64,
    pub z_violations: f64,
    pub z_diversity: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// Sorted by `combined`, best first.
    pub rows: Vec<ComparisonRow>,
    /// Whether GD entered the diversity z-score (it is dropped if any GD is non-finite).
    pub diversity_uses_gd: bool,
}

/// Population z-scores; a constant column scores 0 everywhere.
///
/// Sums run over the sorted values so the result does not depend on input order.
pub fn z_scores(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / sd).collect()
}

/// Ranks reports by the mean of their violation-count and diversity z-scores.
///
/// Reports must share limits and either the model or the strategy.
pub fn compare(reports: &[(String, CampaignReport)]) -> Result<Comparison, ReportError> {
    if reports.len() < 2 {
        return Err(ReportError::TooFew {
            needed: 2,
            got: reports.len(),
        });
    }
    let first = &reports[0].1;
    for (label, r) in reports {
        if r.limits != first.limits {
            return Err(ReportError::Incomparable(format!(
                "{label} uses different safety limits"
            )));
        }
    }
    let same_model = reports.iter().all(|(_, r)| r.model.sha256 == first.model.sha256);
    let same_strategy = reports.iter().all(|(_, r)| r.strategy == first.strategy);
    if !same_model && !same_strategy {
        return Err(ReportError::Incomparable(
            "reports differ in both model and strategy".into(),
        ));
    }

    let violations: Vec<f64> = reports.iter().map(|(_, r)| r.violations as f64).collect();
    let gd: Vec<f64> = reports
        .iter()
        .map(|(_, r)| r.diversity.as_ref().map_or(f64::NEG_INFINITY, |d| d.gd_logdet))
        .collect();
    let vd: Vec<f64> = reports
        .iter()
        .map(|(_, r)| r.diversity.as_ref().map_or(0.0, |d| d.vd_std))
        .collect();
    let diversity_uses_gd = gd.iter().all(|v| v.is_finite());
    let zv = z_scores(&violations);
    let zvd = z_scores(&vd);
    let zd: Vec<f64> = if diversity_uses_gd {
        let zgd = z_scores(&gd);
        zgd.iter().zip(&zvd).map(|(a, b)| (a + b) / 2.0).collect()
    } else {
        zvd
    };

    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .enumerate()
        .map(|(i, (label, r))| ComparisonRow {
            label: label.clone(),
            strategy: r.strategy,
            violations: r.violations,
            gd_logdet: gd[i],
            vd_std: vd[i],
            z_violations: zv[i],
            z_diversity: zd[i],
            combined: (zv[i] + zd[i]) / 2.0,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.combined
            .partial_cmp(&a.combined)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.label.cmp(&b.label))
    });
    Ok(Comparison {
        rows,
        diversity_uses_gd,
    })
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("row serializes");
        }
        into_string(w)
    }

    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
        let mut out = format!(
            "{:<width$}  {:>10}  {:>10}  {:>10}  {:>8}  {:>8}  {:>8}\n",
            "label", "violations", "GD", "VD", "z_viol", "z_div", "combined"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>10}  {:>10.3}  {:>10.3}  {:>8.3}  {:>8.3}  {:>8.3}",
                r.label, r.violations, r.gd_logdet, r.vd_std, r.z_violations, r.z_diversity, r.combined
            );
        }
        if !self.diversity_uses_gd {
            out.push_str("note: some GD values are -inf; diversity z-score uses VD only\n");
        }
        out
    }
}

/// Unique-violation counts per constraint for one campaign.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub label: String,
    pub model: String,
    pub strategy: MetricKind,
    pub test_limit: u64,
    pub violations: u64,
    #[serde(flatten)]
    pub counts: ConstraintCounts,
}

/// Per-constraint breakdown; all reports must share strategy and test budget.
pub fn breakdown(reports: &[(String, CampaignReport)]) -> Result<Vec<BreakdownRow>, ReportError> {
    let Some((_, first)) = reports.first() else {
        return Err(ReportError::TooFew { needed: 1, got: 0 });
    };
    for (label, r) in reports {
        if r.test_limit != first.test_limit {
            return Err(ReportError::Incomparable(format!(
                "{label} ran {} tests, expected {}",
                r.test_limit, first.test_limit
            )));
        }
        if r.strategy != first.strategy {
            return Err(ReportError::Incomparable(format!(
                "{label} used {}, expected {}",
                r.strategy, first.strategy
            )));
        }
    }
    Ok(reports
        .iter()
        .map(|(label, r)| BreakdownRow {
            label: label.clone(),
            model: r.model.path.clone(),
            strategy: r.strategy,
            test_limit: r.test_limit,
            violations: r.violations,
            counts: r.per_constraint,
        })
        .collect())
}

pub fn breakdown_csv(rows: &[BreakdownRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "model", "strategy", "test_limit", "violations", "PI", "CD", "IC", "AE"])
        .expect("in-memory write");
    for r in rows {
        let c = r.counts;
        w.write_record([
            r.label.clone(),
            r.model.clone(),
            r.strategy.to_string(),
            r.test_limit.to_string(),
            r.violations.to_string(),
            c.pi.to_string(),
            c.cd.to_string(),
            c.ic.to_string(),
            c.ae.to_string(),
        ])
        .expect("in-memory write");
    }
    into_string(w)
}

fn into_string(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV of UTF-8 fields")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_scores_population() {
        let z = z_scores(&[1.0, 2.0, 3.0]);
        let sd = (2.0f64 / 3.0).sqrt();
        assert!((z[0] + 1.0 / sd).abs() < 1e-12);
        assert_eq!(z[1], 0.0);
        assert!((z[2] - 1.0 / sd).abs() < 1e-12);
        assert_eq!(z_scores(&[4.0, 4.0]), vec![0.0, 0.0]);
        assert_eq!(z_scores(&[100.0, 300.0]), vec![-1.0, 1.0]);
    }

    #[test]
    fn csv_quotes_labels() {
        let row = BreakdownRow {
            label: "a,b".into(),
            model: "m.nef".into(),
            strategy: MetricKind::Kmvp,
            test_limit: 10,
            violations: 3,
            counts: ConstraintCounts { pi: 0, cd: 1, ic: 2, ae: 3 },
        };
        let csv = breakdown_csv(&[row]);
        assert_eq!(csv.lines().nth(1), Some("\"a,b\",m.nef,VO-KMVP,10,3,0,1,2,3"));
    }
}
