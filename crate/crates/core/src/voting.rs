//! Complementary answers for divergent questions.
//!
//! The text model first labels the question GLOBAL (theme, counting,
//! ordering, reverse questions) or LOCAL (a single moment). Global
//! questions go through clue narration: the video model describes what it
//! sees in each of `T` segments and the text model answers from the
//! collected clues. Local questions go through temporal refocus: every
//! segment is probed with a yes/no localization question, and the video
//! model answers the original question from the segment with the highest
//! affirmative logit.
//!
//! Neither path can fail a question: any backend failure turns the answer
//! into `None`, which casts no vote.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ProbeScore, VotingConfig};
use crate::eval::dataset::QaItem;
use crate::prompts::{format_clues, format_options, render, PromptSet};
use crate::protocol::{
    extract_margin, parse_option, BackendError, Decode, OptionLabel, TextLmRequest, TextModel, VideoModel,
    VideoQaRequest, VideoQaResponse,
};
use crate::sampling::{segment_uniform_sample, split_segments, Segment};

/// Clue text standing for "nothing relevant here".
pub const NO_CLUE: &str = "NONE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Global,
    Local,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionCategory {
    pub kind: QuestionKind,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClueSet {
    /// One entry per segment; [`NO_CLUE`] when the segment shows nothing relevant.
    pub clues: Vec<String>,
    pub key_info: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefocusProbe {
    pub localization_question: String,
    /// Probe score per segment; `None` is negative infinity (failed or empty segment).
    pub yes_logits: Vec<Option<f64>>,
    pub chosen_segment: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComplementaryAnswer {
    pub category: Option<QuestionCategory>,
    pub narration: Option<ClueSet>,
    pub refocus: Option<RefocusProbe>,
    pub answer: Option<OptionLabel>,
}

/// Backends, templates and settings shared by the voting calls.
#[derive(Clone, Copy)]
pub struct VotingContext<'a> {
    pub video: &'a dyn VideoModel,
    pub text: &'a dyn TextModel,
    pub prompts: &'a PromptSet,
    pub cfg: &'a VotingConfig,
}

impl VotingContext<'_> {
    fn ask_text(&self, prompt: String) -> Result<String, BackendError> {
        let resp = self.text.complete(&TextLmRequest {
            prompt,
            decode: Decode::default(),
        })?;
        Ok(resp.text)
    }
}

/// First occurrence of the literal `GLOBAL` or `LOCAL` in a reply.
pub fn parse_category(reply: &str) -> Option<QuestionKind> {
    match (reply.find("GLOBAL"), reply.find("LOCAL")) {
        (Some(g), Some(l)) if l < g => Some(QuestionKind::Local),
        (Some(_), _) => Some(QuestionKind::Global),
        (None, Some(_)) => Some(QuestionKind::Local),
        (None, None) => None,
    }
}

/// Asks the text model for the question type; unreadable replies count as local.
pub fn categorize(item: &QaItem, ctx: &VotingContext<'_>) -> Result<QuestionCategory, BackendError> {
    let prompt = render(
        &ctx.prompts.categorize,
        &[
            ("question", &item.question),
            ("options", &format_options(&item.options)),
        ],
    );
    let reply = ctx.ask_text(prompt)?;
    let kind = parse_category(&reply).unwrap_or_else(|| {
        log::warn!(
            "question {}: no GLOBAL/LOCAL in categorization reply {reply:?}; using LOCAL",
            item.id
        );
        QuestionKind::Local
    });
    Ok(QuestionCategory {
        kind,
        rationale: reply.trim().to_string(),
    })
}

fn segments_of(item: &QaItem, cfg: &VotingConfig) -> Vec<Segment> {
    split_segments(&item.video, cfg.segments).expect("segment count validated in config")
}

fn segment_request(
    item: &QaItem,
    seg: &Segment,
    k: usize,
    question: String,
    options: Vec<String>,
    want_logits: bool,
) -> VideoQaRequest {
    let schedule = segment_uniform_sample(seg, k).expect("caller skips empty segments");
    VideoQaRequest {
        video_id: item.video.video_id.clone(),
        frame_indices: schedule.indices,
        question_text: question,
        options,
        want_logits,
        decode: Decode::default(),
    }
}

/// Verbalized option if readable, otherwise the logit argmax.
pub fn answer_from_response(resp: &VideoQaResponse, n_options: usize) -> Option<OptionLabel> {
    parse_option(&resp.raw_text, n_options).or_else(|| {
        extract_margin(resp)
            .ok()
            .map(|s| s.best)
            .filter(|l| l.index() < n_options)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NarrationOutcome {
    pub clues: Option<ClueSet>,
    pub answer: Option<OptionLabel>,
}

/// Key information from the text model, one narration per segment from the
/// video model, then an answer from the text model over all clues.
pub fn narrate_and_answer(item: &QaItem, ctx: &VotingContext<'_>) -> NarrationOutcome {
    let failed = NarrationOutcome {
        clues: None,
        answer: None,
    };
    let key_info = match ctx.ask_text(render(&ctx.prompts.keyinfo, &[("question", &item.question)])) {
        Ok(text) => text.trim().to_string(),
        Err(e) => {
            log::warn!("question {}: key-information call failed: {e}", item.id);
            return failed;
        }
    };
    let narrate_prompt = render(
        &ctx.prompts.narrate,
        &[("key_info", &key_info), ("question", &item.question)],
    );
    let results: Vec<Result<String, BackendError>> = segments_of(item, ctx.cfg)
        .par_iter()
        .map(|seg| {
            if seg.is_empty() {
                return Ok(NO_CLUE.to_string());
            }
            let req = segment_request(
                item,
                seg,
                ctx.cfg.frames_per_segment,
                narrate_prompt.clone(),
                Vec::new(),
                false,
            );
            let text = ctx.video.video_qa(&req)?.raw_text.trim().to_string();
            Ok(if text.is_empty() { NO_CLUE.to_string() } else { text })
        })
        .collect();
    let mut clues = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(c) => clues.push(c),
            Err(e) => {
                log::warn!("question {}: narration call failed: {e}", item.id);
                return failed;
            }
        }
    }
    let clue_set = ClueSet { clues, key_info };
    let prompt = render(
        &ctx.prompts.summarize,
        &[
            ("clues", &format_clues(&clue_set.clues)),
            ("question", &item.question),
            ("options", &format_options(&item.options)),
        ],
    );
    let answer = match ctx.ask_text(prompt) {
        Ok(reply) => parse_option(&reply, item.options.len()),
        Err(e) => {
            log::warn!("question {}: summarization call failed: {e}", item.id);
            None
        }
    };
    NarrationOutcome {
        clues: Some(clue_set),
        answer,
    }
}

/// Index of the highest score, `None` counting as negative infinity; ties go to the first index.
pub fn argmax_segment(scores: &[Option<f64>]) -> usize {
    let mut best = 0;
    for (t, s) in scores.iter().enumerate().skip(1) {
        let current = scores[best].unwrap_or(f64::NEG_INFINITY);
        if s.unwrap_or(f64::NEG_INFINITY) > current {
            best = t;
        }
    }
    best
}

fn probe_score(resp: &VideoQaResponse, mode: ProbeScore) -> Option<f64> {
    let yes = resp.yes_logit?;
    match mode {
        ProbeScore::Yes => Some(yes),
        ProbeScore::YesMinusNo => resp.no_logit.map(|no| yes - no),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefocusOutcome {
    pub probe: Option<RefocusProbe>,
    pub answer: Option<OptionLabel>,
}

/// Localization question from the text model, one yes/no probe per
/// segment, then the original question on the best-scoring segment.
pub fn refocus_and_answer(item: &QaItem, ctx: &VotingContext<'_>) -> RefocusOutcome {
    let reply = match ctx.ask_text(render(&ctx.prompts.localize, &[("question", &item.question)])) {
        Ok(text) => text,
        Err(e) => {
            log::warn!("question {}: localization rewrite failed: {e}", item.id);
            return RefocusOutcome {
                probe: None,
                answer: None,
            };
        }
    };
    let localization_question = reply
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or_default()
        .to_string();

    let segments = segments_of(item, ctx.cfg);
    let k = ctx.cfg.frames_per_segment;
    let yes_logits: Vec<Option<f64>> = segments
        .par_iter()
        .map(|seg| {
            if seg.is_empty() {
                return None;
            }
            let req = segment_request(
                item,
                seg,
                k,
                localization_question.clone(),
                vec!["Yes".into(), "No".into()],
                true,
            );
            match ctx.video.video_qa(&req) {
                Ok(resp) => {
                    let score = probe_score(&resp, ctx.cfg.probe_score);
                    if score.is_none() {
                        log::warn!(
                            "question {}: probe of segment {} returned no yes/no logits",
                            item.id,
                            seg.index
                        );
                    }
                    score
                }
                Err(e) => {
                    log::warn!("question {}: probe of segment {} failed: {e}", item.id, seg.index);
                    None
                }
            }
        })
        .collect();
    let chosen_segment = argmax_segment(&yes_logits);
    let probe = RefocusProbe {
        localization_question,
        yes_logits,
        chosen_segment,
    };

    let seg = &segments[chosen_segment];
    if seg.is_empty() {
        return RefocusOutcome {
            probe: Some(probe),
            answer: None,
        };
    }
    let req = segment_request(item, seg, k, item.question.clone(), item.options.clone(), true);
    let answer = match ctx.video.video_qa(&req) {
        Ok(resp) => answer_from_response(&resp, item.options.len()),
        Err(e) => {
            log::warn!("question {}: refocused answer failed: {e}", item.id);
            None
        }
    };
    RefocusOutcome {
        probe: Some(probe),
        answer,
    }
}

/// Categorizes the question and runs the matching answering path.
pub fn complementary_answer(item: &QaItem, ctx: &VotingContext<'_>) -> ComplementaryAnswer {
    let category = match categorize(item, ctx) {
        Ok(c) => c,
        Err(e) => {
            log::warn!("question {}: categorization failed: {e}", item.id);
            return ComplementaryAnswer::default();
        }
    };
    match category.kind {
        QuestionKind::Global => {
            let out = narrate_and_answer(item, ctx);
            ComplementaryAnswer {
                category: Some(category),
                narration: out.clues,
                refocus: None,
                answer: out.answer,
            }
        }
        QuestionKind::Local => {
            let out = refocus_and_answer(item, ctx);
            ComplementaryAnswer {
                category: Some(category),
                narration: None,
                refocus: out.probe,
                answer: out.answer,
            }
        }
    }
}
