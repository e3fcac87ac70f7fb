//! The run report and its metric tables.
//!
//! `report.json` is self-contained: every figure and table can be
//! regenerated from it without re-running the experiment. Metric tables are
//! tab-separated text with `#`-prefixed summary lines, and are byte-stable
//! for a fixed config and master seed (wall-clock lives only in
//! `report.json`).

use crate::attack::{AttackKind, AttackResult, ScoredSample};
use crate::metrics::PrivacyUtilityPoint;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use super::config::ExperimentConfig;
use super::ExperimentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub package: String,
    pub volume_format: String,
    pub checkpoint_format: String,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            package: env!("CARGO_PKG_VERSION").to_string(),
            volume_format: "vol1".to_string(),
            checkpoint_format: "ckpt1".to_string(),
        }
    }
}

/// Per-step aggregate over repeats (sd = 0 for a single run).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub utility_mean: f64,
    pub utility_sd: f64,
    pub privacy_mean: f64,
    pub privacy_sd: f64,
    pub auc_mean: f64,
    pub auc_sd: f64,
    pub correlation_accuracy_mean: f64,
    pub correlation_accuracy_sd: f64,
    pub correlation_mse_mean: f64,
    pub correlation_mse_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub versions: Versions,
    pub wall_clock_seconds: f64,
    pub checkpoint_steps: Vec<u64>,
    /// One curve per repeat, in repeat order.
    pub runs: Vec<Vec<PrivacyUtilityPoint>>,
    /// Aggregate over repeats.
    pub curve: Vec<CurvePoint>,
    pub discriminator_attack: Option<AttackResult>,
    pub generator_attack: Option<AttackResult>,
    pub utility_augmentation: Option<f64>,
    /// Steps where privacy exceeded 1 (attack AUC below one half), kept
    /// visible rather than clamped.
    pub anomalies: Vec<String>,
    /// Every artifact file the run emitted, relative to the report.
    pub files: Vec<String>,
}

impl Report {
    pub fn aggregate_runs(runs: &[Vec<PrivacyUtilityPoint>]) -> Vec<CurvePoint> {
        let Some(first) = runs.first() else {
            return Vec::new();
        };
        let mut out = Vec::with_capacity(first.len());
        for (i, point) in first.iter().enumerate() {
            let column: Vec<&PrivacyUtilityPoint> = runs.iter().map(|run| &run[i]).collect();
            let stats = |f: &dyn Fn(&PrivacyUtilityPoint) -> f64| -> (f64, f64) {
                let values: Vec<f64> = column.iter().map(|p| f(p)).collect();
                let n = values.len() as f64;
                let mean = values.iter().sum::<f64>() / n;
                let sd = if values.len() < 2 {
                    0.0
                } else {
                    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                };
                (mean, sd)
            };
            let (utility_mean, utility_sd) = stats(&|p| p.utility);
            let (privacy_mean, privacy_sd) = stats(&|p| p.privacy);
            let (auc_mean, auc_sd) = stats(&|p| p.auc);
            let (ca_mean, ca_sd) = stats(&|p| p.fidelity.correlation_accuracy);
            let (mse_mean, mse_sd) = stats(&|p| p.fidelity.correlation_mse);
            out.push(CurvePoint {
                step: point.step,
                utility_mean,
                utility_sd,
                privacy_mean,
                privacy_sd,
                auc_mean,
                auc_sd,
                correlation_accuracy_mean: ca_mean,
                correlation_accuracy_sd: ca_sd,
                correlation_mse_mean: mse_mean,
                correlation_mse_sd: mse_sd,
            });
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| ExperimentError::stage("report", e.to_string()))?;
        std::fs::write(path, json)
            .map_err(|e| ExperimentError::stage("report", format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::stage("report", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::stage("report", e.to_string()))
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// One attack result as structured text: `#` summary lines then
/// `id<TAB>score<TAB>member` records.
pub fn attack_result_text(result: &AttackResult) -> String {
    let mut text = String::new();
    let kind = match result.kind {
        AttackKind::Discriminator => "discriminator",
        AttackKind::Generator => "generator",
    };
    let _ = writeln!(text, "# attack\t{kind}");
    let _ = writeln!(text, "# checkpoint_step\t{}", result.checkpoint_step);
    let _ = writeln!(text, "# n\t{}", result.n);
    let _ = writeln!(text, "# m\t{}", result.m);
    let _ = writeln!(text, "# auc\t{}", fmt(result.auc));
    let _ = writeln!(text, "# t_statistic\t{}", result.t_statistic.map(fmt).unwrap_or_else(|| "NA".into()));
    let _ = writeln!(text, "# p_value\t{}", result.p_value.map(fmt).unwrap_or_else(|| "NA".into()));
    let _ = writeln!(text, "# top_m_accuracy\t{}", fmt(result.top_m_accuracy));
    let _ = writeln!(text, "id\tscore\tmember");
    for s in &result.samples {
        let _ = writeln!(text, "{}\t{}\t{}", s.id, fmt(s.score), u8::from(s.member));
    }
    text
}

/// Parses the record section of [`attack_result_text`] back into scored
/// samples (derived metrics are recomputable from these alone).
pub fn parse_attack_records(text: &str) -> Result<Vec<ScoredSample>, ExperimentError> {
    let mut out = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("id\t") || line.is_empty() {
            continue;
        }
        let mut cells = line.split('\t');
        let (Some(id), Some(score), Some(member)) = (cells.next(), cells.next(), cells.next()) else {
            return Err(ExperimentError::stage("report", format!("malformed attack record {line:?}")));
        };
        out.push(ScoredSample {
            id: id.to_string(),
            score: score
                .parse()
                .map_err(|e| ExperimentError::stage("report", format!("bad score in {line:?}: {e}")))?,
            member: member == "1",
        });
    }
    Ok(out)
}

/// `curve.tsv`: the aggregated per-step table.
pub fn curve_table(curve: &[CurvePoint]) -> String {
    let mut text = String::from(
        "step\tutility_mean\tutility_sd\tprivacy_mean\tprivacy_sd\tauc_mean\tauc_sd\tcorr_accuracy_mean\tcorr_accuracy_sd\tcorr_mse_mean\tcorr_mse_sd\n",
    );
    for p in curve {
        let _ = writeln!(
            text,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.step,
            fmt(p.utility_mean),
            fmt(p.utility_sd),
            fmt(p.privacy_mean),
            fmt(p.privacy_sd),
            fmt(p.auc_mean),
            fmt(p.auc_sd),
            fmt(p.correlation_accuracy_mean),
            fmt(p.correlation_accuracy_sd),
            fmt(p.correlation_mse_mean),
            fmt(p.correlation_mse_sd),
        );
    }
    text
}

/// `curve_runs.tsv`: every repeat's raw points.
pub fn runs_table(runs: &[Vec<PrivacyUtilityPoint>]) -> String {
    let mut text =
        String::from("run\tstep\tutility\tprivacy\tauc\tcorr_accuracy\tcorr_mse\n");
    for (r, run) in runs.iter().enumerate() {
        for p in run {
            let _ = writeln!(
                text,
                "{r}\t{}\t{}\t{}\t{}\t{}\t{}",
                p.step,
                fmt(p.utility),
                fmt(p.privacy),
                fmt(p.auc),
                fmt(p.fidelity.correlation_accuracy),
                fmt(p.fidelity.correlation_mse),
            );
        }
    }
    text
}

/// `roc_<attack>.tsv`.
pub fn roc_table(result: &AttackResult) -> String {
    let mut text = String::from("fpr\ttpr\n");
    for (f, t) in &result.roc.points {
        let _ = writeln!(text, "{}\t{}", fmt(*f), fmt(*t));
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::RocCurve;

    fn sample_attack() -> AttackResult {
        let samples = vec![
            ScoredSample { id: "a".into(), score: 0.9, member: true },
            ScoredSample { id: "b".into(), score: 0.7, member: true },
            ScoredSample { id: "c".into(), score: 0.2, member: false },
            ScoredSample { id: "d".into(), score: 0.1, member: false },
        ];
        AttackResult::from_scores(AttackKind::Discriminator, samples, 42).unwrap()
    }

    #[test]
    fn attack_text_round_trips_records() {
        let result = sample_attack();
        let text = attack_result_text(&result);
        assert!(text.contains("# auc\t1"));
        assert!(text.contains("# checkpoint_step\t42"));
        let records = parse_attack_records(&text).unwrap();
        assert_eq!(records, result.samples);
        let rebuilt = AttackResult::from_scores(result.kind, records, result.checkpoint_step).unwrap();
        assert_eq!(rebuilt, result);
    }

    #[test]
    fn aggregate_of_identical_runs_has_zero_sd() {
        let point = PrivacyUtilityPoint {
            step: 10,
            utility: 0.5,
            privacy: 0.8,
            auc: 0.6,
            fidelity: crate::radiomics::FidelityScore { correlation_accuracy: 0.75, correlation_mse: 0.02 },
        };
        let runs = vec![vec![point.clone()], vec![point.clone()], vec![point]];
        let agg = Report::aggregate_runs(&runs);
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].utility_mean, 0.5);
        assert_eq!(agg[0].utility_sd, 0.0);
        assert!((agg[0].privacy_mean - 0.8).abs() < 1e-12);

        let empty: Vec<Vec<PrivacyUtilityPoint>> = Vec::new();
        assert!(Report::aggregate_runs(&empty).is_empty());
    }

    #[test]
    fn roc_curve_serializes() {
        let roc = RocCurve { points: vec![(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)] };
        let json = serde_json::to_string(&roc).unwrap();
        let back: RocCurve = serde_json::from_str(&json).unwrap();
        assert_eq!(roc, back);
    }
}
