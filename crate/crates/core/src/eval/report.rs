//! Run reports: per-question records plus aggregate metrics.
//!
//! `report.json` holds everything; `summary.csv` holds the aggregates as
//! `schema_version,metric,value` rows. All fields except `timing` depend
//! only on the configuration, the dataset and the backend replies, so two
//! runs that differ only in worker count produce identical reports apart
//! from that block.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SamplingConfig, ScoringConfig, VotingConfig};
use crate::scoring::{frequency_score, PredictionSet};

use super::runner::{QuestionRecord, QuestionStatus};
use super::EvalError;

pub const SCHEMA_VERSION: u32 = 1;

/// Pass@n is reported at these sample counts when they do not exceed N.
pub const PASS_AT: [u32; 3] = [1, 5, 10];

/// The settings that determine a report's contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub sampling: SamplingConfig,
    pub scoring: ScoringConfig,
    pub voting: VotingConfig,
    pub seed: u64,
    pub strict: bool,
}

impl ReportSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        ReportSettings {
            sampling: cfg.sampling.clone(),
            scoring: cfg.scoring.clone(),
            voting: cfg.voting.clone(),
            seed: cfg.run.seed,
            strict: cfg.run.strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub questions: usize,
    pub failed: usize,
    /// Denominator of the accuracy metrics: every question when strict,
    /// otherwise only the questions that produced predictions.
    pub evaluated: usize,
    pub accuracy: f64,
    pub majority_accuracy: f64,
    pub pass_at: BTreeMap<u32, f64>,
    pub divergent: usize,
    /// Fraction (not percent) of answered questions whose samples disagree.
    pub divergence_pct: f64,
    pub selection_accuracy_on_divergent: Option<f64>,
    /// Accuracy of picking one sample at random, on the divergent questions.
    pub random_baseline_on_divergent: Option<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Fraction of answered questions without consensus.
pub fn divergence_pct(records: &[QuestionRecord]) -> Result<f64, EvalError> {
    let answered: Vec<&QuestionRecord> = records.iter().filter(|r| r.status == QuestionStatus::Ok).collect();
    if answered.is_empty() {
        return Err(EvalError::Empty("no answered questions".into()));
    }
    Ok(ratio(answered.iter().filter(|r| !r.consensus).count(), answered.len()))
}

/// Selection accuracy and random-sample baseline over divergent questions.
pub fn selection_accuracy_on_divergent(records: &[QuestionRecord]) -> Result<(f64, f64), EvalError> {
    let divergent: Vec<&QuestionRecord> = records
        .iter()
        .filter(|r| r.status == QuestionStatus::Ok && !r.consensus)
        .collect();
    if divergent.is_empty() {
        return Err(EvalError::Empty("no divergent questions".into()));
    }
    let correct = divergent.iter().filter(|r| r.correct).count();
    let baseline: f64 = divergent
        .iter()
        .map(|r| {
            let set: PredictionSet = r.prediction_set();
            frequency_score(&set)
                .expect("answered questions have predictions")
                .get(&r.truth)
                .copied()
                .unwrap_or(0.0)
        })
        .sum();
    Ok((ratio(correct, divergent.len()), baseline / divergent.len() as f64))
}

impl Aggregates {
    pub fn compute(records: &[QuestionRecord], strict: bool, n_samples: u32) -> Self {
        let failed = records.iter().filter(|r| r.status == QuestionStatus::Failed).count();
        let counted: Vec<&QuestionRecord> = records
            .iter()
            .filter(|r| strict || r.status == QuestionStatus::Ok)
            .collect();
        let evaluated = counted.len();
        let accuracy = ratio(counted.iter().filter(|r| r.correct).count(), evaluated);
        let majority_accuracy = ratio(counted.iter().filter(|r| r.majority_correct()).count(), evaluated);
        let pass_at = PASS_AT
            .iter()
            .filter(|&&n| n <= n_samples)
            .map(|&n| (n, ratio(counted.iter().filter(|r| r.covers(n)).count(), evaluated)))
            .collect();
        let divergent = records
            .iter()
            .filter(|r| r.status == QuestionStatus::Ok && !r.consensus)
            .count();
        let (selection, baseline) = match selection_accuracy_on_divergent(records) {
            Ok((s, b)) => (Some(s), Some(b)),
            Err(_) => (None, None),
        };
        Aggregates {
            questions: records.len(),
            failed,
            evaluated,
            accuracy,
            majority_accuracy,
            pass_at,
            divergent,
            divergence_pct: divergence_pct(records).unwrap_or(0.0),
            selection_accuracy_on_divergent: selection,
            random_baseline_on_divergent: baseline,
        }
    }
}

/// Wall-clock facts about a run; excluded from comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_ms: u64,
    pub wall_ms: f64,
    pub workers: usize,
    pub mean_question_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub settings: ReportSettings,
    pub aggregates: Aggregates,
    pub records: Vec<QuestionRecord>,
    pub timing: Timing,
}

impl RunReport {
    pub fn new(cfg: &RunConfig, records: Vec<QuestionRecord>, timing: Timing) -> Self {
        let aggregates = Aggregates::compute(&records, cfg.run.strict, cfg.sampling.n_samples);
        RunReport {
            schema_version: SCHEMA_VERSION,
            settings: ReportSettings::from_config(cfg),
            aggregates,
            records,
            timing,
        }
    }

    /// Recomputes every derived field and checks it against the stored value.
    pub fn verify(&self) -> Result<(), EvalError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(EvalError::Schema(format!(
                "report schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        for r in &self.records {
            if r.correct != (r.selected == Some(r.truth)) {
                return Err(EvalError::Schema(format!(
                    "record {}: correct flag disagrees with selection",
                    r.id
                )));
            }
            if let Some(b) = &r.breakdown {
                if Some(b.selected) != r.selected {
                    return Err(EvalError::Schema(format!(
                        "record {}: breakdown selects a different option",
                        r.id
                    )));
                }
            }
        }
        let again = Aggregates::compute(&self.records, self.settings.strict, self.settings.sampling.n_samples);
        if again != self.aggregates {
            return Err(EvalError::Schema("stored aggregates do not match the records".into()));
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self, EvalError> {
        let report: RunReport = serde_json::from_str(text).map_err(|e| EvalError::Schema(format!("report: {e}")))?;
        report.verify()?;
        Ok(report)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report without its `timing` block.
    pub fn deterministic_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        value.as_object_mut().expect("report is an object").remove("timing");
        serde_json::to_string_pretty(&value).expect("value serializes")
    }

    pub fn summary_csv(&self) -> String {
        let a = &self.aggregates;
        let mut rows: Vec<(String, String)> = vec![
            ("questions".into(), a.questions.to_string()),
            ("failed".into(), a.failed.to_string()),
            ("evaluated".into(), a.evaluated.to_string()),
            ("accuracy".into(), a.accuracy.to_string()),
            ("majority_accuracy".into(), a.majority_accuracy.to_string()),
        ];
        rows.extend(a.pass_at.iter().map(|(n, v)| (format!("pass@{n}"), v.to_string())));
        rows.push(("divergent".into(), a.divergent.to_string()));
        rows.push(("divergence_pct".into(), a.divergence_pct.to_string()));
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        rows.push((
            "selection_accuracy_on_divergent".into(),
            opt(a.selection_accuracy_on_divergent),
        ));
        rows.push((
            "random_baseline_on_divergent".into(),
            opt(a.random_baseline_on_divergent),
        ));

        let mut out = String::from("schema_version,metric,value\n");
        for (metric, value) in rows {
            writeln!(out, "{SCHEMA_VERSION},{metric},{value}").expect("writing to a String");
        }
        out
    }

    /// Writes `report.json` and `summary.csv` into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        let io = |e: std::io::Error| EvalError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("report.json"), self.to_json_string()).map_err(io)?;
        std::fs::write(dir.join("summary.csv"), self.summary_csv()).map_err(io)?;
        Ok(())
    }
}
