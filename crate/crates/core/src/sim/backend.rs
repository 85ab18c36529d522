//! Simulated video and text models over a [`World`].

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::protocol::{
    BackendError, OptionLabel, TextLmRequest, TextLmResponse, TextModel, VideoModel, VideoQaRequest, VideoQaResponse,
};
use crate::rng::{rng_from_seed, uniform_below, unit_f64, SeedHasher, SeededRng};
use crate::voting::{QuestionKind, NO_CLUE};

use super::{MarginDist, SimError, SimQuestion, SyntheticVideo, World};

/// `1 - (1 - q)^n`: chance that `n` independent tries with success `q` hit at least once.
pub fn closed_form_pass_at_n(q: f64, n: u32) -> f64 {
    assert!((0.0..=1.0).contains(&q), "q must be a probability");
    1.0 - (1.0 - q).powi(n as i32)
}

fn sample_margin(dist: MarginDist, rng: &mut SeededRng) -> f64 {
    match dist {
        MarginDist::Fixed { value } => value,
        MarginDist::Uniform { lo, hi } => lo + (hi - lo) * unit_f64(rng),
    }
}

fn request_rng(domain: &str, world_seed: u64, request_bytes: &[u8]) -> SeededRng {
    rng_from_seed(SeedHasher::new(domain).u64(world_seed).bytes(request_bytes).finish())
}

/// Answers a video request from the world.
///
/// A request whose question matches a world question for that video is a
/// multiple-choice query; an empty option list is a narration request; any
/// other request is a yes/no localization probe.
pub fn sim_video_qa(req: &VideoQaRequest, world: &World) -> Result<VideoQaResponse, SimError> {
    let video = world
        .video(&req.video_id)
        .ok_or_else(|| SimError::UnknownVideo(req.video_id.clone()))?;
    if let Some(&bad) = req.frame_indices.iter().find(|&&f| f >= video.n_frames) {
        return Err(SimError::BadRequest(format!(
            "frame {bad} outside video {:?} with {} frames",
            video.video_id, video.n_frames
        )));
    }
    let bytes = serde_json::to_vec(req).expect("request serializes");
    let mut rng = request_rng("sim/video_qa", world.seed, &bytes);
    if let Some(q) = world.question_for(&req.video_id, &req.question_text) {
        if req.options.len() != q.options.len() {
            return Err(SimError::BadRequest(format!(
                "question {:?} has {} options, request sent {}",
                q.id,
                q.options.len(),
                req.options.len()
            )));
        }
        return Ok(answer_question(q, world, req, &mut rng));
    }
    if req.options.is_empty() {
        return Ok(narrate(video, &req.frame_indices));
    }
    Ok(probe(video, world, req, &mut rng))
}

fn answer_question(q: &SimQuestion, world: &World, req: &VideoQaRequest, rng: &mut SeededRng) -> VideoQaResponse {
    let covered = world.key_events(q).any(|e| e.hit_by(&req.frame_indices));
    let p = if covered { world.p_coverage(q) } else { world.p_miss(q) };
    let correct = unit_f64(rng) < p;
    let n = q.options.len();
    let chosen = if correct {
        q.answer
    } else {
        distractor(q, world.policy.lure_weight, rng)
    };
    let policy = &world.policy;
    let margin = sample_margin(
        if correct {
            policy.margin_when_correct
        } else {
            policy.margin_when_wrong
        },
        rng,
    );

    let others: Vec<OptionLabel> = OptionLabel::all(n).filter(|&l| l != chosen).collect();
    let runner_up = others[uniform_below(rng, others.len() as u64) as usize];
    let second = 4.0 * unit_f64(rng) - 2.0;
    let mut logits = BTreeMap::new();
    for &l in &others {
        let value = if l == runner_up {
            second
        } else {
            second - 0.1 - 2.9 * unit_f64(rng)
        };
        logits.insert(l, value);
    }
    logits.insert(chosen, second + margin);

    let raw_text = match uniform_below(rng, 4) {
        0 => format!("({chosen})"),
        1 => format!("The answer is ({chosen})."),
        2 => format!("{chosen}. {}", q.options[chosen.index()]),
        _ => format!("Answer: {chosen}"),
    };
    VideoQaResponse {
        raw_text,
        option_logits: req.want_logits.then_some(logits),
        yes_logit: None,
        no_logit: None,
    }
}

fn distractor(q: &SimQuestion, lure_weight: f64, rng: &mut SeededRng) -> OptionLabel {
    let wrong: Vec<OptionLabel> = OptionLabel::all(q.options.len()).filter(|&l| l != q.answer).collect();
    match q.lure {
        Some(lure) => {
            let rest: Vec<OptionLabel> = wrong.iter().copied().filter(|&l| l != lure).collect();
            if rest.is_empty() || unit_f64(rng) < lure_weight {
                lure
            } else {
                rest[uniform_below(rng, rest.len() as u64) as usize]
            }
        }
        None => wrong[uniform_below(rng, wrong.len() as u64) as usize],
    }
}

fn narrate(video: &SyntheticVideo, frames: &[u64]) -> VideoQaResponse {
    let mut lines: Vec<(u64, String)> = video
        .events
        .iter()
        .filter(|e| e.hit_by(frames))
        .map(|e| (e.lo, format!("[{}] {}", e.token, e.description)))
        .collect();
    lines.sort();
    let raw_text = if lines.is_empty() {
        NO_CLUE.to_string()
    } else {
        lines.into_iter().map(|(_, l)| l).collect::<Vec<_>>().join("; ")
    };
    VideoQaResponse {
        raw_text,
        option_logits: None,
        yes_logit: None,
        no_logit: None,
    }
}

fn probe(video: &SyntheticVideo, world: &World, req: &VideoQaRequest, rng: &mut SeededRng) -> VideoQaResponse {
    // The longest event description named in the probe question decides what is looked for.
    let target = video
        .events
        .iter()
        .filter(|e| req.question_text.contains(e.description.as_str()))
        .max_by_key(|e| e.description.len());
    let described = target.map(|t| t.description.as_str());
    let hit = described.is_some_and(|d| {
        video
            .events
            .iter()
            .filter(|e| e.description == d)
            .any(|e| e.hit_by(&req.frame_indices))
    });
    let policy = &world.policy;
    let base = if hit {
        policy.probe_yes_hit
    } else {
        policy.probe_yes_miss
    };
    let yes = base + policy.probe_noise * (2.0 * unit_f64(rng) - 1.0);
    let no = -yes;
    let option_logits = req.want_logits.then(|| {
        OptionLabel::all(req.options.len())
            .enumerate()
            .map(|(i, l)| (l, if i == 0 { yes } else { no }))
            .collect()
    });
    VideoQaResponse {
        raw_text: if yes > no { "Yes".into() } else { "No".into() },
        option_logits,
        yes_logit: req.want_logits.then_some(yes),
        no_logit: req.want_logits.then_some(no),
    }
}

fn prompt_field<'a>(prompt: &'a str, prefix: &str) -> Option<&'a str> {
    prompt.lines().find_map(|l| l.strip_prefix(prefix)).map(str::trim)
}

/// Bracketed tokens such as `[e3-1]` anywhere in the text.
fn bracket_tokens(text: &str) -> BTreeSet<&str> {
    let mut tokens = BTreeSet::new();
    let mut rest = text;
    while let Some(open) = rest.find('[') {
        let after = &rest[open + 1..];
        match after.find(']') {
            Some(close) => {
                tokens.insert(&after[..close]);
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    tokens
}

const GLOBAL_CUES: [&str; 14] = [
    "how many",
    "count",
    "order",
    "sequence",
    "overall",
    "theme",
    "infer",
    "summar",
    "main idea",
    "purpose",
    "throughout",
    "whole video",
    "not ",
    "before",
];

fn looks_global(question: &str) -> bool {
    let lower = question.to_lowercase();
    GLOBAL_CUES.iter().any(|c| lower.contains(c))
}

/// Answers a text-model prompt built from the shipped templates.
pub fn sim_text_lm(req: &TextLmRequest, world: &World) -> Result<TextLmResponse, SimError> {
    let task = req.prompt.lines().next().unwrap_or_default().trim();
    let question_text = prompt_field(&req.prompt, "Question:").unwrap_or_default();
    let question = world.question_by_text(question_text);
    let descriptions = |q: &SimQuestion| {
        let mut ds: Vec<&str> = world.key_events(q).map(|e| e.description.as_str()).collect();
        ds.dedup();
        ds.join(", ")
    };
    let text = match task {
        "Task: question categorization." => {
            let global = match question {
                Some(q) => q.kind == QuestionKind::Global,
                None => looks_global(question_text),
            };
            if global {
                "GLOBAL - the question needs information spread across the whole video.".to_string()
            } else {
                "LOCAL - the question can be answered from one moment of the video.".to_string()
            }
        }
        "Task: key information." => match question {
            Some(q) => format!("Look for every appearance of {}.", descriptions(q)),
            None => "Look for the people and objects named in the question.".to_string(),
        },
        "Task: localization question." => match question {
            Some(q) => format!(
                "Is the video showing {}?",
                world.key_events(q).next().map_or("", |e| e.description.as_str())
            ),
            None => format!("Is the video showing what this question asks about: {question_text}"),
        },
        "Task: clue summarization." => match question {
            Some(q) => {
                let seen = bracket_tokens(&req.prompt);
                let found = q.key_events.iter().filter(|t| seen.contains(t.as_str())).count();
                let label = match q.kind {
                    QuestionKind::Global => closest_count_option(q, found),
                    QuestionKind::Local if found > 0 => q.answer,
                    QuestionKind::Local => q.lure.unwrap_or(
                        OptionLabel::all(q.options.len())
                            .find(|&l| l != q.answer)
                            .expect(">= 2 options"),
                    ),
                };
                format!("Based on the clues, the answer is ({label}).")
            }
            None => "The clues do not identify an answer.".to_string(),
        },
        _ => return Err(SimError::UnrecognizedPrompt(task.chars().take(80).collect())),
    };
    Ok(TextLmResponse { text })
}

/// Option whose numeric text is closest to `count`; ties go to the earlier letter.
fn closest_count_option(q: &SimQuestion, count: usize) -> OptionLabel {
    let mut best = (OptionLabel::from_index(0).expect("index 0"), f64::INFINITY);
    for (i, text) in q.options.iter().enumerate() {
        if let Ok(v) = text.trim().parse::<f64>() {
            let d = (v - count as f64).abs();
            if d < best.1 {
                best = (OptionLabel::from_index(i).expect("validated option count"), d);
            }
        }
    }
    best.0
}

/// In-process handle implementing both backend traits.
#[derive(Clone)]
pub struct SimBackend {
    world: Arc<World>,
}

impl SimBackend {
    pub fn new(world: Arc<World>) -> Self {
        SimBackend { world }
    }

    pub fn world(&self) -> &World {
        &self.world
    }
}

impl From<SimError> for BackendError {
    fn from(e: SimError) -> Self {
        BackendError::Backend(e.to_string())
    }
}

impl VideoModel for SimBackend {
    fn video_qa(&self, req: &VideoQaRequest) -> Result<VideoQaResponse, BackendError> {
        Ok(sim_video_qa(req, &self.world)?)
    }
}

impl TextModel for SimBackend {
    fn complete(&self, req: &TextLmRequest) -> Result<TextLmResponse, BackendError> {
        Ok(sim_text_lm(req, &self.world)?)
    }
}
