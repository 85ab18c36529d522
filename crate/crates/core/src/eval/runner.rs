//! Per-question pipeline: sample, check consensus, vote, select.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::prompts::PromptSet;
use crate::protocol::{
    extract_margin, parse_option, BackendError, Decode, Instrumented, OptionLabel, TextModel, VideoModel,
    VideoQaRequest,
};
use crate::rng::sample_seed;
use crate::sampling::sample;
use crate::scoring::{
    combine_and_select, consensus_shortcut, majority_label, voting_score, Prediction, PredictionSet, ScoreBreakdown,
    SelectionParams,
};
use crate::voting::{complementary_answer, ComplementaryAnswer, VotingContext};

use super::dataset::QaItem;
use super::report::{RunReport, Timing};
use super::EvalError;

/// The two backends a run talks to.
#[derive(Clone, Copy)]
pub struct Clients<'a> {
    pub video: &'a dyn VideoModel,
    pub text: &'a dyn TextModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Sampling,
    Transport,
    Protocol,
    Backend,
    /// The reply had neither a readable option nor usable logits.
    Unusable,
}

impl From<&BackendError> for FailureKind {
    fn from(e: &BackendError) -> Self {
        match e {
            BackendError::Transport(_) => FailureKind::Transport,
            BackendError::Protocol(_) => FailureKind::Protocol,
            BackendError::Backend(_) => FailureKind::Backend,
        }
    }
}

/// A sample that produced no prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSample {
    pub sample_index: u32,
    pub kind: FailureKind,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionStatus {
    Ok,
    /// No sample produced a prediction.
    Failed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCalls {
    pub sampling_video_qa: u64,
    pub voting_video_qa: u64,
    pub voting_text_lm: u64,
}

/// Everything recorded about one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub truth: OptionLabel,
    pub n_options: usize,
    pub status: QuestionStatus,
    pub n_requested: u32,
    pub predictions: Vec<Prediction>,
    pub dropped: Vec<DroppedSample>,
    pub consensus: bool,
    pub majority: Option<OptionLabel>,
    pub selected: Option<OptionLabel>,
    pub correct: bool,
    pub breakdown: Option<ScoreBreakdown>,
    pub voting: Option<ComplementaryAnswer>,
    pub calls: PhaseCalls,
}

impl QuestionRecord {
    pub fn prediction_set(&self) -> PredictionSet {
        PredictionSet::new(self.id.clone(), self.predictions.clone(), self.n_requested)
    }

    /// Whether the first `n` samples include the ground truth.
    pub fn covers(&self, n: u32) -> bool {
        self.predictions
            .iter()
            .any(|p| p.sample_index < n && p.option == self.truth)
    }

    pub fn majority_correct(&self) -> bool {
        self.majority == Some(self.truth)
    }
}

pub fn selection_params(cfg: &RunConfig) -> SelectionParams {
    SelectionParams {
        alpha: cfg.scoring.alpha,
        beta: cfg.scoring.beta,
        confidence: cfg.scoring.confidence(),
        restrict_to_sampled: cfg.voting.restrict_to_sampled,
    }
}

fn one_sample(item: &QaItem, cfg: &RunConfig, video: &dyn VideoModel, j: u32) -> Result<Prediction, DroppedSample> {
    let drop = |kind, reason: String| DroppedSample {
        sample_index: j,
        kind,
        reason,
    };
    let seed = sample_seed(cfg.run.seed, &item.id, j);
    let schedule = sample(cfg.sampling.strategy, &item.video, cfg.sampling.frames_per_sample, seed)
        .map_err(|e| drop(FailureKind::Sampling, e.to_string()))?;
    let req = VideoQaRequest {
        video_id: item.video.video_id.clone(),
        frame_indices: schedule.indices.clone(),
        question_text: item.question.clone(),
        options: item.options.clone(),
        want_logits: true,
        decode: Decode::default(),
    };
    let resp = video.video_qa(&req).map_err(|e| drop((&e).into(), e.to_string()))?;
    let n = item.options.len();
    let summary = match &resp.option_logits {
        Some(logits) if logits.keys().any(|l| l.index() >= n) => {
            return Err(drop(FailureKind::Protocol, format!("logits for options beyond {n}")));
        }
        Some(logits) if logits.len() != n => {
            return Err(drop(
                FailureKind::Protocol,
                format!("logits cover {} of {n} options", logits.len()),
            ));
        }
        _ => extract_margin(&resp).map_err(|e| drop(FailureKind::Unusable, e.to_string()))?,
    };
    let option = parse_option(&resp.raw_text, n).unwrap_or(summary.best);
    Ok(Prediction {
        sample_index: j,
        schedule,
        option,
        margin: summary.margin,
        max_logit: summary.max_logit,
        raw_text: resp.raw_text,
    })
}

/// Runs one question end to end. Backend failures are recorded, never raised.
pub fn run_question(item: &QaItem, cfg: &RunConfig, prompts: &PromptSet, clients: Clients<'_>) -> QuestionRecord {
    let sampler = Instrumented::new(clients.video, clients.text);
    let n_requested = cfg.sampling.n_samples;
    let results: Vec<Result<Prediction, DroppedSample>> = (0..n_requested)
        .into_par_iter()
        .map(|j| one_sample(item, cfg, &sampler, j))
        .collect();
    let mut predictions = Vec::new();
    let mut dropped = Vec::new();
    for r in results {
        match r {
            Ok(p) => predictions.push(p),
            Err(d) => {
                log::debug!("question {}: sample {} dropped: {}", item.id, d.sample_index, d.reason);
                dropped.push(d);
            }
        }
    }
    let mut record = QuestionRecord {
        id: item.id.clone(),
        truth: item.truth,
        n_options: item.options.len(),
        status: QuestionStatus::Failed,
        n_requested,
        predictions,
        dropped,
        consensus: false,
        majority: None,
        selected: None,
        correct: false,
        breakdown: None,
        voting: None,
        calls: PhaseCalls {
            sampling_video_qa: sampler.counts().video_qa,
            ..PhaseCalls::default()
        },
    };
    let set = record.prediction_set();
    if set.is_empty() {
        log::warn!("question {}: every sample failed", item.id);
        return record;
    }
    record.status = QuestionStatus::Ok;
    record.majority = Some(majority_label(&set).expect("non-empty"));

    if let Some(unanimous) = consensus_shortcut(&set).expect("non-empty") {
        record.consensus = true;
        record.selected = Some(unanimous);
        record.correct = unanimous == item.truth;
        return record;
    }

    let voter = Instrumented::new(clients.video, clients.text);
    let ctx = VotingContext {
        video: &voter,
        text: &voter,
        prompts,
        cfg: &cfg.voting,
    };
    let vote = complementary_answer(item, &ctx);
    record.calls.voting_video_qa = voter.counts().video_qa;
    record.calls.voting_text_lm = voter.counts().text_lm;

    let votes = voting_score(item.options.len(), vote.answer);
    let breakdown = combine_and_select(&set, &selection_params(cfg), &votes).expect("weights validated in config");
    record.selected = Some(breakdown.selected);
    record.correct = breakdown.selected == item.truth;
    record.breakdown = Some(breakdown);
    record.voting = Some(vote);
    record
}

/// Runs every question on a pool of `cfg.run.workers` threads.
///
/// Records come back sorted by id. Fails only when every question failed,
/// with the kind of the first recorded failure.
pub fn run_dataset(
    items: &[QaItem],
    cfg: &RunConfig,
    prompts: &PromptSet,
    clients: Clients<'_>,
) -> Result<RunReport, EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.workers.max(1))
        .build()
        .map_err(|e| EvalError::Config(format!("thread pool: {e}")))?;
    let started = Instant::now();
    let started_unix_ms = unix_ms();
    let mut timed: Vec<(QuestionRecord, f64)> = pool.install(|| {
        items
            .par_iter()
            .map(|item| {
                let t = Instant::now();
                let record = run_question(item, cfg, prompts, clients);
                (record, t.elapsed().as_secs_f64() * 1e3)
            })
            .collect()
    });
    timed.sort_by(|a, b| a.0.id.cmp(&b.0.id));

    if !timed.is_empty() && timed.iter().all(|(r, _)| r.status == QuestionStatus::Failed) {
        let first = timed.iter().flat_map(|(r, _)| &r.dropped).next();
        return Err(match first {
            Some(d) => {
                let message = format!("every question failed; first error: {}", d.reason);
                match d.kind {
                    FailureKind::Transport => EvalError::Transport(message),
                    FailureKind::Backend => EvalError::Backend(message),
                    FailureKind::Protocol | FailureKind::Unusable => EvalError::Protocol(message),
                    FailureKind::Sampling => EvalError::Config(message),
                }
            }
            None => EvalError::Config("every question failed with no samples requested".into()),
        });
    }

    let per_question_ms: Vec<f64> = timed.iter().map(|(_, ms)| *ms).collect();
    let records: Vec<QuestionRecord> = timed.into_iter().map(|(r, _)| r).collect();
    let timing = Timing {
        started_unix_ms,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        workers: cfg.run.workers.max(1),
        mean_question_ms: if per_question_ms.is_empty() {
            0.0
        } else {
            per_question_ms.iter().sum::<f64>() / per_question_ms.len() as f64
        },
    };
    Ok(RunReport::new(cfg, records, timing))
}

fn unix_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
