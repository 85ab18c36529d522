//! Self-reward selection over a set of sampled predictions.
//!
//! For every candidate option `p` the selector combines three scores:
//!
//! * frequency `s_f(p)`: share of predictions that chose `p`;
//! * marginal confidence `s_mc(p)`: the best first-token margin
//!   `l_max - l_second` among predictions that chose `p` (0 if none did);
//! * vote `s_v(p)`: 1 if `p` is the complementary answer, else 0;
//!
//! as `s(p) = s_f(p) + alpha * s_mc(p) + beta * s_v(p)` and picks the
//! argmax. Ties go to the higher frequency, then the earlier letter. With
//! `alpha = beta = 0` the selector is plain majority voting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::OptionLabel;
use crate::sampling::FrameSchedule;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("prediction set is empty")]
    EmptySet,
    #[error("{sets} prediction sets but {truths} ground-truth labels")]
    LengthMismatch { sets: usize, truths: usize },
    #[error("pass@{n} requested but only {available} samples were drawn")]
    NExceedsRequested { n: u32, available: u32 },
    #[error("weights must be finite and non-negative (alpha = {alpha}, beta = {beta})")]
    InvalidWeights { alpha: f64, beta: f64 },
}

/// One sampled answer and its first-token logit statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_index: u32,
    pub schedule: FrameSchedule,
    pub option: OptionLabel,
    /// `l_max - l_second` within this sample; never negative.
    pub margin: f64,
    pub max_logit: f64,
    pub raw_text: String,
}

/// The predictions kept for one question, ordered by sample index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub question_id: String,
    pub predictions: Vec<Prediction>,
    pub n_requested: u32,
}

impl PredictionSet {
    /// Sorts by sample index; duplicate indices keep the first occurrence.
    pub fn new(question_id: impl Into<String>, mut predictions: Vec<Prediction>, n_requested: u32) -> Self {
        predictions.sort_by_key(|p| p.sample_index);
        predictions.dedup_by_key(|p| p.sample_index);
        PredictionSet {
            question_id: question_id.into(),
            predictions,
            n_requested,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    /// Options that appear at least once, in letter order.
    pub fn observed_options(&self) -> Vec<OptionLabel> {
        let mut seen: Vec<OptionLabel> = self.predictions.iter().map(|p| p.option).collect();
        seen.sort();
        seen.dedup();
        seen
    }

    /// Whether any of the samples with index below `n` chose `truth`.
    pub fn covers(&self, truth: OptionLabel, n: u32) -> bool {
        self.predictions.iter().any(|p| p.sample_index < n && p.option == truth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntraConfidence {
    /// `l_max - l_second` of the sample.
    Marginal,
    /// `l_max` of the sample.
    MaxLogit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterAggregation {
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfidenceVariant {
    pub intra: IntraConfidence,
    pub inter: InterAggregation,
}

impl Default for ConfidenceVariant {
    fn default() -> Self {
        ConfidenceVariant {
            intra: IntraConfidence::Marginal,
            inter: InterAggregation::Max,
        }
    }
}

/// Share of predictions choosing each observed option.
pub fn frequency_score(set: &PredictionSet) -> Result<BTreeMap<OptionLabel, f64>, ScoreError> {
    if set.is_empty() {
        return Err(ScoreError::EmptySet);
    }
    let mut counts: BTreeMap<OptionLabel, usize> = BTreeMap::new();
    for p in &set.predictions {
        *counts.entry(p.option).or_default() += 1;
    }
    let total = set.len() as f64;
    Ok(counts.into_iter().map(|(l, c)| (l, c as f64 / total)).collect())
}

/// Per-option confidence aggregated over the predictions that chose it.
///
/// Options nobody chose are absent from the map; callers treat them as 0.
pub fn marginal_confidence_score(set: &PredictionSet, variant: ConfidenceVariant) -> BTreeMap<OptionLabel, f64> {
    let mut grouped: BTreeMap<OptionLabel, Vec<f64>> = BTreeMap::new();
    for p in &set.predictions {
        let value = match variant.intra {
            IntraConfidence::Marginal => p.margin,
            IntraConfidence::MaxLogit => p.max_logit,
        };
        grouped.entry(p.option).or_default().push(value);
    }
    grouped
        .into_iter()
        .map(|(label, values)| {
            let agg = match variant.inter {
                InterAggregation::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                InterAggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
            };
            (label, agg)
        })
        .collect()
}

/// 1 for the complementary answer, 0 for every other option.
pub fn voting_score(n_options: usize, complementary: Option<OptionLabel>) -> BTreeMap<OptionLabel, u8> {
    OptionLabel::all(n_options)
        .map(|l| (l, u8::from(Some(l) == complementary)))
        .collect()
}

/// Returns the unanimous option, or `None` when the predictions disagree.
pub fn consensus_shortcut(set: &PredictionSet) -> Result<Option<OptionLabel>, ScoreError> {
    let first = set.predictions.first().ok_or(ScoreError::EmptySet)?.option;
    Ok(set.predictions.iter().all(|p| p.option == first).then_some(first))
}

/// Most frequent option; ties go to the earliest letter.
pub fn majority_label(set: &PredictionSet) -> Result<OptionLabel, ScoreError> {
    let freq = frequency_score(set)?;
    let mut best: Option<(OptionLabel, f64)> = None;
    for (label, f) in freq {
        if best.is_none_or(|(_, b)| f > b) {
            best = Some((label, f));
        }
    }
    Ok(best.expect("non-empty set has an observed option").0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionScore {
    pub label: OptionLabel,
    pub s_f: f64,
    pub s_mc: f64,
    pub s_v: u8,
    pub s_total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    /// Candidates in letter order.
    pub options: Vec<OptionScore>,
    pub selected: OptionLabel,
    pub consensus: bool,
}

impl ScoreBreakdown {
    pub fn get(&self, label: OptionLabel) -> Option<&OptionScore> {
        self.options.iter().find(|o| o.label == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionParams {
    pub alpha: f64,
    pub beta: f64,
    pub confidence: ConfidenceVariant,
    /// Drop candidates that only the complementary answer proposes.
    pub restrict_to_sampled: bool,
}

impl Default for SelectionParams {
    fn default() -> Self {
        SelectionParams {
            alpha: 1.0,
            beta: 3.0,
            confidence: ConfidenceVariant::default(),
            restrict_to_sampled: false,
        }
    }
}

/// Scores every candidate and selects the best one.
///
/// Candidates are the observed options plus, unless restricted, any option
/// holding a vote. A voted-only option enters with zero frequency and zero
/// confidence.
pub fn combine_and_select(
    set: &PredictionSet,
    params: &SelectionParams,
    votes: &BTreeMap<OptionLabel, u8>,
) -> Result<ScoreBreakdown, ScoreError> {
    let SelectionParams { alpha, beta, .. } = *params;
    if !(alpha.is_finite() && alpha >= 0.0 && beta.is_finite() && beta >= 0.0) {
        return Err(ScoreError::InvalidWeights { alpha, beta });
    }
    let freq = frequency_score(set)?;
    let conf = marginal_confidence_score(set, params.confidence);

    let mut candidates: Vec<OptionLabel> = freq.keys().copied().collect();
    if !params.restrict_to_sampled {
        candidates.extend(votes.iter().filter(|(_, &v)| v > 0).map(|(&l, _)| l));
        candidates.sort();
        candidates.dedup();
    }

    let options: Vec<OptionScore> = candidates
        .into_iter()
        .map(|label| {
            let s_f = freq.get(&label).copied().unwrap_or(0.0);
            let s_mc = conf.get(&label).copied().unwrap_or(0.0);
            let s_v = votes.get(&label).copied().unwrap_or(0);
            OptionScore {
                label,
                s_f,
                s_mc,
                s_v,
                s_total: s_f + alpha * s_mc + beta * f64::from(s_v),
            }
        })
        .collect();

    // Letter order plus strict comparisons keeps the earliest letter on full ties.
    let mut best = &options[0];
    for o in &options[1..] {
        if o.s_total > best.s_total || (o.s_total == best.s_total && o.s_f > best.s_f) {
            best = o;
        }
    }
    let selected = best.label;
    Ok(ScoreBreakdown {
        options,
        selected,
        consensus: false,
    })
}

/// Fraction of questions whose first `n` samples include the ground truth.
pub fn pass_at_n(sets: &[PredictionSet], truths: &[OptionLabel], n: u32) -> Result<f64, ScoreError> {
    if sets.len() != truths.len() {
        return Err(ScoreError::LengthMismatch {
            sets: sets.len(),
            truths: truths.len(),
        });
    }
    if sets.is_empty() {
        return Err(ScoreError::EmptySet);
    }
    if let Some(short) = sets.iter().find(|s| n > s.n_requested) {
        return Err(ScoreError::NExceedsRequested {
            n,
            available: short.n_requested,
        });
    }
    let hits = sets
        .iter()
        .zip(truths)
        .filter(|(set, &truth)| set.covers(truth, n))
        .count();
    Ok(hits as f64 / sets.len() as f64)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::sampling::Strategy;

    pub fn label(c: char) -> OptionLabel {
        OptionLabel::from_letter(c).unwrap()
    }

    pub fn pred(index: u32, option: char, margin: f64) -> Prediction {
        Prediction {
            sample_index: index,
            schedule: FrameSchedule {
                indices: vec![],
                strategy: Strategy::BinWise,
                seed: 0,
            },
            option: label(option),
            margin,
            max_logit: margin + 1.0,
            raw_text: option.to_string(),
        }
    }

    pub fn set_of(options: &str, margins: &[f64]) -> PredictionSet {
        let preds = options
            .chars()
            .enumerate()
            .map(|(i, c)| pred(i as u32, c, margins.get(i).copied().unwrap_or(1.0)))
            .collect::<Vec<_>>();
        let n = preds.len() as u32;
        PredictionSet::new("q", preds, n)
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use proptest::prelude::*;

    const MAX_MARGINAL: ConfidenceVariant = ConfidenceVariant {
        intra: IntraConfidence::Marginal,
        inter: InterAggregation::Max,
    };

    #[test]
    fn frequency_examples() {
        let f = frequency_score(&set_of("AAABBCAABA", &[])).unwrap();
        assert_eq!(f.len(), 3);
        assert!((f[&label('A')] - 0.6).abs() < 1e-12);
        assert!((f[&label('B')] - 0.3).abs() < 1e-12);
        assert!((f[&label('C')] - 0.1).abs() < 1e-12);
        assert_eq!(
            frequency_score(&set_of("AAAAAAAAAA", &[])).unwrap(),
            BTreeMap::from([(label('A'), 1.0)])
        );
        assert_eq!(
            frequency_score(&set_of("D", &[])).unwrap(),
            BTreeMap::from([(label('D'), 1.0)])
        );
        assert_eq!(frequency_score(&set_of("", &[])), Err(ScoreError::EmptySet));
    }

    #[test]
    fn confidence_examples() {
        let set = set_of("AAAB", &[2.0, 0.1, 1.3, 0.7]);
        let mc = marginal_confidence_score(&set, MAX_MARGINAL);
        assert_eq!(mc[&label('A')], 2.0);
        assert_eq!(mc[&label('B')], 0.7);
        let mean = marginal_confidence_score(
            &set,
            ConfidenceVariant {
                intra: IntraConfidence::Marginal,
                inter: InterAggregation::Mean,
            },
        );
        assert!((mean[&label('A')] - 3.4 / 3.0).abs() < 1e-12);
        let maxlogit = marginal_confidence_score(
            &set,
            ConfidenceVariant {
                intra: IntraConfidence::MaxLogit,
                inter: InterAggregation::Max,
            },
        );
        assert_eq!(maxlogit[&label('A')], 3.0);
        assert!(!mc.contains_key(&label('C')));
    }

    #[test]
    fn voting_examples() {
        let v = voting_score(4, Some(label('B')));
        assert_eq!(v.values().copied().collect::<Vec<_>>(), vec![0, 1, 0, 0]);
        assert!(voting_score(4, None).values().all(|&x| x == 0));
    }

    #[test]
    fn voted_only_option_can_win() {
        let set = set_of("AB", &[0.5, 0.5]);
        let votes = voting_score(4, Some(label('C')));
        let b = combine_and_select(&set, &SelectionParams::default(), &votes).unwrap();
        let c = b.get(label('C')).unwrap();
        assert_eq!((c.s_f, c.s_mc, c.s_v, c.s_total), (0.0, 0.0, 1, 3.0));
        assert_eq!(b.selected, label('C'));

        let restricted = SelectionParams {
            restrict_to_sampled: true,
            ..SelectionParams::default()
        };
        let b = combine_and_select(&set, &restricted, &votes).unwrap();
        assert!(b.get(label('C')).is_none());
        assert_eq!(b.selected, label('A'));
    }

    #[test]
    fn combined_score_example() {
        // S_f(A) = 0.6, S_mc(A) = 2.0, vote on A, alpha = 1, beta = 3 -> 5.6
        let set = set_of("AAABBCAABA", &[2.0, 0.5, 0.5, 1.0, 1.0, 1.0, 0.5, 0.5, 1.0, 0.5]);
        let b = combine_and_select(&set, &SelectionParams::default(), &voting_score(4, Some(label('A')))).unwrap();
        let a = b.get(label('A')).unwrap();
        assert!((a.s_total - 5.6).abs() <= 1e-9 * 5.6);
        assert_eq!(b.selected, label('A'));
        assert!(!b.consensus);
    }

    #[test]
    fn ties_prefer_frequency_then_letter() {
        // A: 0.25 + 1.5 = 1.75; B: 0.75 + 1.0 = 1.75, B has the higher frequency
        let set = set_of("ABBB", &[1.5, 1.0, 0.5, 0.0]);
        let params = SelectionParams {
            beta: 0.0,
            ..SelectionParams::default()
        };
        let b = combine_and_select(&set, &params, &BTreeMap::new()).unwrap();
        assert_eq!(b.get(label('A')).unwrap().s_total, b.get(label('B')).unwrap().s_total);
        assert_eq!(b.selected, label('B'));

        let even = set_of("AB", &[1.0, 1.0]);
        let b = combine_and_select(&even, &params, &BTreeMap::new()).unwrap();
        assert_eq!(b.selected, label('A'));
    }

    #[test]
    fn zero_weights_reduce_to_majority() {
        let set = set_of("CCBBA", &[0.1, 0.1, 9.0, 9.0, 9.0]);
        let params = SelectionParams {
            alpha: 0.0,
            beta: 0.0,
            ..SelectionParams::default()
        };
        let b = combine_and_select(&set, &params, &voting_score(3, Some(label('A')))).unwrap();
        assert_eq!(b.selected, label('B'));
        assert_eq!(majority_label(&set).unwrap(), label('B'));
    }

    #[test]
    fn rejects_negative_weights() {
        let params = SelectionParams {
            alpha: -1.0,
            ..SelectionParams::default()
        };
        assert!(matches!(
            combine_and_select(&set_of("AB", &[]), &params, &BTreeMap::new()),
            Err(ScoreError::InvalidWeights { .. })
        ));
    }

    #[test]
    fn consensus_examples() {
        assert_eq!(
            consensus_shortcut(&set_of("AAAAAAAAAA", &[])).unwrap(),
            Some(label('A'))
        );
        assert_eq!(consensus_shortcut(&set_of("AAAAAAAAAB", &[])).unwrap(), None);
        assert_eq!(consensus_shortcut(&set_of("C", &[])).unwrap(), Some(label('C')));
        assert_eq!(consensus_shortcut(&set_of("", &[])), Err(ScoreError::EmptySet));
    }

    #[test]
    fn pass_at_n_examples() {
        let sets = vec![
            set_of("AB", &[]),
            set_of("BB", &[]),
            set_of("CA", &[]),
            set_of("DD", &[]),
        ];
        let truths: Vec<_> = "ABAC".chars().map(label).collect();
        assert_eq!(pass_at_n(&sets, &truths, 2).unwrap(), 0.75);
        assert_eq!(pass_at_n(&sets, &truths, 1).unwrap(), 0.5);
        let wrong = vec![set_of("BBB", &[]), set_of("CCC", &[])];
        assert_eq!(pass_at_n(&wrong, &[label('A'), label('A')], 3).unwrap(), 0.0);
        assert_eq!(
            pass_at_n(&sets, &truths[..3], 2),
            Err(ScoreError::LengthMismatch { sets: 4, truths: 3 })
        );
        assert!(matches!(
            pass_at_n(&sets, &truths, 3),
            Err(ScoreError::NExceedsRequested { .. })
        ));
    }

    fn arb_set() -> impl Strategy<Value = PredictionSet> {
        proptest::collection::vec((0usize..5, 0.0f64..6.0), 1..15).prop_map(|items| {
            let preds = items
                .into_iter()
                .enumerate()
                .map(|(i, (o, m))| pred(i as u32, OptionLabel::from_index(o).unwrap().letter(), m))
                .collect::<Vec<_>>();
            let n = preds.len() as u32;
            PredictionSet::new("q", preds, n)
        })
    }

    proptest! {
        #[test]
        fn frequency_sums_to_one(set in arb_set()) {
            let total: f64 = frequency_score(&set).unwrap().values().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn rescaling_margins_and_alpha_keeps_selection(set in arb_set(), pow in -4i32..5, vote in proptest::option::of(0usize..5)) {
            let c = 2f64.powi(pow);
            let votes = voting_score(5, vote.and_then(OptionLabel::from_index));
            let base = combine_and_select(&set, &SelectionParams::default(), &votes).unwrap();
            let mut scaled = set.clone();
            for p in &mut scaled.predictions {
                p.margin *= c;
            }
            let params = SelectionParams { alpha: 1.0 / c, ..SelectionParams::default() };
            prop_assert_eq!(combine_and_select(&scaled, &params, &votes).unwrap().selected, base.selected);
        }

        #[test]
        fn max_confidence_never_drops_on_append(set in arb_set(), o in 0usize..5, m in 0.0f64..6.0) {
            let label = OptionLabel::from_index(o).unwrap();
            let before = marginal_confidence_score(&set, MAX_MARGINAL).get(&label).copied().unwrap_or(0.0);
            let mut grown = set.clone();
            grown.predictions.push(pred(set.len() as u32, label.letter(), m));
            let after = marginal_confidence_score(&grown, MAX_MARGINAL)[&label];
            prop_assert!(after >= before);
        }

        #[test]
        fn pass_at_n_is_monotone(sets in proptest::collection::vec(arb_set(), 1..10), t in 0usize..5) {
            let n_max = sets.iter().map(|s| s.n_requested).min().unwrap();
            let truths = vec![OptionLabel::from_index(t).unwrap(); sets.len()];
            let mut last = 0.0;
            for n in 1..=n_max {
                let v = pass_at_n(&sets, &truths, n).unwrap();
                prop_assert!(v >= last);
                last = v;
            }
        }
    }
}
