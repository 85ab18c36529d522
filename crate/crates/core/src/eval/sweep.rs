//! One-axis parameter sweeps over a dataset.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::config::RunConfig;
use crate::prompts::PromptSet;
use crate::scoring::{InterAggregation, IntraConfidence};

use super::dataset::QaItem;
use super::report::{Aggregates, RunReport};
use super::runner::{run_dataset, Clients};
use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Alpha,
    Beta,
    /// Frames per sample.
    Frames,
    NSamples,
    /// `marginal-max`, `marginal-mean`, `maxlogit-max` or `maxlogit-mean`.
    ConfidenceVariant,
    /// Which score terms are active: `f`, `f+mc`, `f+v` or `f+mc+v`.
    Components,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::Alpha,
        SweepAxis::Beta,
        SweepAxis::Frames,
        SweepAxis::NSamples,
        SweepAxis::ConfidenceVariant,
        SweepAxis::Components,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Alpha => "alpha",
            SweepAxis::Beta => "beta",
            SweepAxis::Frames => "frames",
            SweepAxis::NSamples => "n_samples",
            SweepAxis::ConfidenceVariant => "confidence_variant",
            SweepAxis::Components => "components",
        }
    }

    /// Returns `base` with this axis set to `value`.
    pub fn apply(self, base: &RunConfig, value: &str) -> Result<RunConfig, EvalError> {
        let bad = |why: &str| EvalError::Config(format!("{}: bad value {value:?}: {why}", self.name()));
        let mut cfg = base.clone();
        let value = value.trim();
        match self {
            SweepAxis::Alpha => cfg.scoring.alpha = value.parse().map_err(|_| bad("not a number"))?,
            SweepAxis::Beta => cfg.scoring.beta = value.parse().map_err(|_| bad("not a number"))?,
            SweepAxis::Frames => cfg.sampling.frames_per_sample = value.parse().map_err(|_| bad("not an integer"))?,
            SweepAxis::NSamples => cfg.sampling.n_samples = value.parse().map_err(|_| bad("not an integer"))?,
            SweepAxis::ConfidenceVariant => {
                let (intra, inter) = value.split_once('-').ok_or_else(|| bad("expected INTRA-INTER"))?;
                cfg.scoring.intra = match intra {
                    "marginal" => IntraConfidence::Marginal,
                    "maxlogit" => IntraConfidence::MaxLogit,
                    _ => return Err(bad("intra must be marginal or maxlogit")),
                };
                cfg.scoring.inter = match inter {
                    "max" => InterAggregation::Max,
                    "mean" => InterAggregation::Mean,
                    _ => return Err(bad("inter must be max or mean")),
                };
            }
            SweepAxis::Components => {
                let parts: Vec<&str> = value.split('+').map(str::trim).collect();
                if parts.first() != Some(&"f") || parts.iter().any(|p| !["f", "mc", "v"].contains(p)) {
                    return Err(bad("expected f, f+mc, f+v or f+mc+v"));
                }
                if !parts.contains(&"mc") {
                    cfg.scoring.alpha = 0.0;
                }
                if !parts.contains(&"v") {
                    cfg.scoring.beta = 0.0;
                }
            }
        }
        cfg.validate().map_err(|e| EvalError::Config(e.to_string()))?;
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, EvalError> {
        SweepAxis::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = SweepAxis::ALL.iter().map(|a| a.name()).collect();
            EvalError::Config(format!(
                "unknown sweep axis {s:?} (expected one of {})",
                names.join(", ")
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub aggregates: Aggregates,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepTable {
    /// Long format: `axis,value,metric,metric_value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,value,metric,metric_value\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            let a = &p.aggregates;
            let mut metrics: Vec<(String, String)> = vec![
                ("accuracy".into(), a.accuracy.to_string()),
                ("majority_accuracy".into(), a.majority_accuracy.to_string()),
                ("divergence_pct".into(), a.divergence_pct.to_string()),
                (
                    "selection_accuracy_on_divergent".into(),
                    opt(a.selection_accuracy_on_divergent),
                ),
                (
                    "random_baseline_on_divergent".into(),
                    opt(a.random_baseline_on_divergent),
                ),
            ];
            metrics.extend(a.pass_at.iter().map(|(n, v)| (format!("pass@{n}"), v.to_string())));
            for (metric, value) in metrics {
                writeln!(out, "{},{},{metric},{value}", self.axis, p.value).expect("writing to a String");
            }
        }
        out
    }
}

/// Runs the dataset once per value. Values are validated before any run starts.
pub fn sweep(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[String],
    items: &[QaItem],
    prompts: &PromptSet,
    clients: Clients<'_>,
) -> Result<(SweepTable, Vec<RunReport>), EvalError> {
    if values.is_empty() {
        return Err(EvalError::Config("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|v| axis.apply(base, v))
        .collect::<Result<Vec<_>, _>>()?;
    let mut points = Vec::with_capacity(values.len());
    let mut reports = Vec::with_capacity(values.len());
    for (value, cfg) in values.iter().zip(&configs) {
        log::info!("sweep {axis}={value}");
        let report = run_dataset(items, cfg, prompts, clients)?;
        points.push(SweepPoint {
            value: value.trim().to_string(),
            aggregates: report.aggregates.clone(),
        });
        reports.push(report);
    }
    Ok((SweepTable { axis, points }, reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_names_round_trip() {
        for axis in SweepAxis::ALL {
            assert_eq!(axis.name().parse::<SweepAxis>().unwrap(), axis);
        }
        assert!("gamma".parse::<SweepAxis>().is_err());
    }

    #[test]
    fn apply_values() {
        let base = RunConfig::default();
        assert_eq!(SweepAxis::Alpha.apply(&base, "0.5").unwrap().scoring.alpha, 0.5);
        assert_eq!(SweepAxis::NSamples.apply(&base, "20").unwrap().sampling.n_samples, 20);
        assert_eq!(
            SweepAxis::Frames.apply(&base, "16").unwrap().sampling.frames_per_sample,
            16
        );
        let c = SweepAxis::ConfidenceVariant.apply(&base, "maxlogit-mean").unwrap();
        assert_eq!(
            (c.scoring.intra, c.scoring.inter),
            (IntraConfidence::MaxLogit, InterAggregation::Mean)
        );
        let f = SweepAxis::Components.apply(&base, "f").unwrap();
        assert_eq!((f.scoring.alpha, f.scoring.beta), (0.0, 0.0));
        let fv = SweepAxis::Components.apply(&base, "f+v").unwrap();
        assert_eq!((fv.scoring.alpha, fv.scoring.beta), (0.0, base.scoring.beta));
        let all = SweepAxis::Components.apply(&base, "f+mc+v").unwrap();
        assert_eq!(all.scoring, base.scoring);
    }

    #[test]
    fn bad_values_are_config_errors() {
        let base = RunConfig::default();
        for (axis, v) in [
            (SweepAxis::Alpha, "x"),
            (SweepAxis::Alpha, "-1"),
            (SweepAxis::NSamples, "0"),
            (SweepAxis::ConfidenceVariant, "marginal"),
            (SweepAxis::Components, "mc+v"),
        ] {
            assert!(matches!(axis.apply(&base, v), Err(EvalError::Config(_))), "{axis}={v}");
        }
    }

    #[test]
    fn csv_shape() {
        let agg = Aggregates {
            questions: 2,
            failed: 0,
            evaluated: 2,
            accuracy: 0.5,
            majority_accuracy: 0.5,
            pass_at: [(1, 0.5)].into_iter().collect(),
            divergent: 1,
            divergence_pct: 0.5,
            selection_accuracy_on_divergent: Some(1.0),
            random_baseline_on_divergent: None,
        };
        let table = SweepTable {
            axis: SweepAxis::Beta,
            points: vec![SweepPoint {
                value: "3".into(),
                aggregates: agg,
            }],
        };
        let csv = table.to_csv();
        assert!(
            csv.starts_with("axis,value,metric,metric_value\nbeta,3,accuracy,0.5\n"),
            "{csv}"
        );
        assert!(csv.contains("beta,3,random_baseline_on_divergent,\n"));
        assert!(csv.contains("beta,3,pass@1,0.5\n"));
    }
}
