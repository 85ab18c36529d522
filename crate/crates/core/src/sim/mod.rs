//! A deterministic simulated world standing in for both backends.
//!
//! A world is a set of synthetic videos with timed events and a set of
//! multiple-choice questions whose answers follow from those events. The
//! simulated video model answers correctly with one probability when its
//! frames touch a key event and another when they miss it; the simulated
//! text model reads clue tokens back out of its prompt. Every response is a
//! pure function of the world seed and the request, so the same request
//! always gets the same bytes back, in process or over HTTP.
//!
//! World files are JSON (see `worlds/` and the README for the schema). A
//! file holding `{"recipe": {...}}` is expanded by [`recipe::WorldRecipe`].

pub mod backend;
pub mod recipe;
pub mod server;

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::dataset::DatasetRow;
use crate::protocol::OptionLabel;
use crate::voting::QuestionKind;

pub use backend::{closed_form_pass_at_n, sim_text_lm, sim_video_qa, SimBackend};
pub use recipe::WorldRecipe;
pub use server::SimServer;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("cannot read world file: {0}")]
    Io(String),
    #[error("world schema error: {0}")]
    Schema(String),
    #[error("unknown video {0:?}")]
    UnknownVideo(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("unrecognized prompt: {0:?}")]
    UnrecognizedPrompt(String),
    #[error("cannot start server: {0}")]
    Server(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarginDist {
    Fixed { value: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl MarginDist {
    fn validate(&self, field: &str) -> Result<(), SimError> {
        let ok = match *self {
            MarginDist::Fixed { value } => value.is_finite() && value >= 0.0,
            MarginDist::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(SimError::Schema(format!(
                "{field}: margins must be finite, non-negative and lo <= hi"
            )))
        }
    }
}

/// How the simulated video model behaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimPolicy {
    pub p_correct_given_coverage: f64,
    pub p_correct_given_miss: f64,
    pub margin_when_correct: MarginDist,
    pub margin_when_wrong: MarginDist,
    /// Share of wrong answers that go to the question's lure option.
    pub lure_weight: f64,
    pub probe_yes_hit: f64,
    pub probe_yes_miss: f64,
    /// Half-width of uniform noise added to probe logits.
    pub probe_noise: f64,
}

impl Default for SimPolicy {
    fn default() -> Self {
        SimPolicy {
            p_correct_given_coverage: 0.9,
            p_correct_given_miss: 0.3,
            margin_when_correct: MarginDist::Uniform { lo: 0.5, hi: 3.5 },
            margin_when_wrong: MarginDist::Uniform { lo: 0.0, hi: 2.0 },
            lure_weight: 0.6,
            probe_yes_hit: 4.0,
            probe_yes_miss: -2.0,
            probe_noise: 0.0,
        }
    }
}

impl SimPolicy {
    fn validate(&self, field: &str) -> Result<(), SimError> {
        for (name, p) in [
            ("p_correct_given_coverage", self.p_correct_given_coverage),
            ("p_correct_given_miss", self.p_correct_given_miss),
            ("lure_weight", self.lure_weight),
        ] {
            check_probability(&format!("{field}.{name}"), p)?;
        }
        self.margin_when_correct
            .validate(&format!("{field}.margin_when_correct"))?;
        self.margin_when_wrong.validate(&format!("{field}.margin_when_wrong"))?;
        if !(self.probe_yes_hit.is_finite() && self.probe_yes_miss.is_finite()) {
            return Err(SimError::Schema(format!(
                "{field}.probe_yes_hit/probe_yes_miss must be finite"
            )));
        }
        if !(self.probe_noise.is_finite() && self.probe_noise >= 0.0) {
            return Err(SimError::Schema(format!("{field}.probe_noise must be >= 0")));
        }
        Ok(())
    }
}

fn check_probability(field: &str, p: f64) -> Result<(), SimError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SimError::Schema(format!("{field}: {p} is not a probability")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimEvent {
    /// Token the narration reports, e.g. `e12-0`.
    pub token: String,
    pub lo: u64,
    pub hi: u64,
    pub description: String,
}

impl SimEvent {
    pub fn hit_by(&self, frames: &[u64]) -> bool {
        frames.iter().any(|&f| (self.lo..self.hi).contains(&f))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticVideo {
    pub video_id: String,
    pub n_frames: u64,
    pub fps: f64,
    #[serde(default)]
    pub events: Vec<SimEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimQuestion {
    pub id: String,
    pub video_id: String,
    pub question: String,
    pub options: Vec<String>,
    pub answer: OptionLabel,
    /// Global questions count their key events: the answer text is the count.
    pub kind: QuestionKind,
    pub key_events: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lure: Option<OptionLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_correct_given_coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_correct_given_miss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct World {
    pub seed: u64,
    #[serde(default)]
    pub policy: SimPolicy,
    pub videos: Vec<SyntheticVideo>,
    pub questions: Vec<SimQuestion>,
    #[serde(skip)]
    index: WorldIndex,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct WorldIndex {
    videos: HashMap<String, usize>,
    by_video_question: HashMap<(String, String), usize>,
    by_text: HashMap<String, usize>,
}

impl World {
    /// Validates and indexes a world built in code.
    pub fn new(
        seed: u64,
        policy: SimPolicy,
        videos: Vec<SyntheticVideo>,
        questions: Vec<SimQuestion>,
    ) -> Result<Self, SimError> {
        let mut world = World {
            seed,
            policy,
            videos,
            questions,
            index: WorldIndex::default(),
        };
        world.validate()?;
        world.build_index();
        Ok(world)
    }

    pub fn from_json_str(text: &str) -> Result<Self, SimError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| SimError::Schema(e.to_string()))?;
        if let Some(recipe) = value.get("recipe") {
            let recipe: WorldRecipe =
                serde_json::from_value(recipe.clone()).map_err(|e| SimError::Schema(format!("recipe: {e}")))?;
            return recipe.generate();
        }
        let world: World = serde_json::from_value(value).map_err(|e| SimError::Schema(e.to_string()))?;
        World::new(world.seed, world.policy, world.videos, world.questions)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("world always serializes")
    }

    fn validate(&self) -> Result<(), SimError> {
        let schema = |msg: String| Err(SimError::Schema(msg));
        self.policy.validate("policy")?;
        let mut videos: HashMap<&str, &SyntheticVideo> = HashMap::new();
        for (i, v) in self.videos.iter().enumerate() {
            if videos.insert(&v.video_id, v).is_some() {
                return schema(format!("videos[{i}].video_id: duplicate {:?}", v.video_id));
            }
            if v.n_frames == 0 {
                return schema(format!("videos[{i}].n_frames: must be >= 1"));
            }
            if !(v.fps.is_finite() && v.fps > 0.0) {
                return schema(format!("videos[{i}].fps: must be > 0"));
            }
            let mut tokens = HashSet::new();
            for (j, e) in v.events.iter().enumerate() {
                if !(e.lo < e.hi && e.hi <= v.n_frames) {
                    return schema(format!(
                        "videos[{i}].events[{j}]: range [{}, {}) outside [0, {})",
                        e.lo, e.hi, v.n_frames
                    ));
                }
                if !tokens.insert(e.token.as_str()) {
                    return schema(format!("videos[{i}].events[{j}].token: duplicate {:?}", e.token));
                }
                if e.description.trim().is_empty() {
                    return schema(format!("videos[{i}].events[{j}].description: empty"));
                }
            }
        }
        let mut ids = HashSet::new();
        let mut pairs = HashSet::new();
        for (i, q) in self.questions.iter().enumerate() {
            let at = |field: &str| format!("questions[{i}].{field}");
            if !ids.insert(q.id.as_str()) {
                return schema(format!("{}: duplicate {:?}", at("id"), q.id));
            }
            let Some(video) = videos.get(q.video_id.as_str()) else {
                return schema(format!("{}: unknown video {:?}", at("video_id"), q.video_id));
            };
            if !pairs.insert((q.video_id.as_str(), q.question.as_str())) {
                return schema(format!("{}: repeated for video {:?}", at("question"), q.video_id));
            }
            if !(2..=crate::protocol::MAX_OPTIONS).contains(&q.options.len()) {
                return schema(format!("{}: need 2 to 26 options", at("options")));
            }
            if q.answer.index() >= q.options.len() {
                return schema(format!("{}: {} is out of range", at("answer"), q.answer));
            }
            if let Some(lure) = q.lure {
                if lure.index() >= q.options.len() || lure == q.answer {
                    return schema(format!("{}: must be a wrong option", at("lure")));
                }
            }
            if q.key_events.is_empty() {
                return schema(format!("{}: at least one key event", at("key_events")));
            }
            for token in &q.key_events {
                if !video.events.iter().any(|e| &e.token == token) {
                    return schema(format!(
                        "{}: no event {token:?} in video {:?}",
                        at("key_events"),
                        q.video_id
                    ));
                }
            }
            if q.kind == QuestionKind::Global && q.options[q.answer.index()].trim() != q.key_events.len().to_string() {
                return schema(format!(
                    "{}: a global question's answer must be its key-event count",
                    at("answer")
                ));
            }
            if let Some(p) = q.p_correct_given_coverage {
                check_probability(&at("p_correct_given_coverage"), p)?;
            }
            if let Some(p) = q.p_correct_given_miss {
                check_probability(&at("p_correct_given_miss"), p)?;
            }
        }
        Ok(())
    }

    fn build_index(&mut self) {
        let mut index = WorldIndex::default();
        for (i, v) in self.videos.iter().enumerate() {
            index.videos.insert(v.video_id.clone(), i);
        }
        for (i, q) in self.questions.iter().enumerate() {
            index
                .by_video_question
                .insert((q.video_id.clone(), q.question.clone()), i);
            index.by_text.entry(q.question.clone()).or_insert(i);
        }
        self.index = index;
    }

    pub fn video(&self, video_id: &str) -> Option<&SyntheticVideo> {
        self.index.videos.get(video_id).map(|&i| &self.videos[i])
    }

    pub fn question_for(&self, video_id: &str, question: &str) -> Option<&SimQuestion> {
        self.index
            .by_video_question
            .get(&(video_id.to_string(), question.to_string()))
            .map(|&i| &self.questions[i])
    }

    /// First question with this exact text, in file order.
    pub fn question_by_text(&self, question: &str) -> Option<&SimQuestion> {
        self.index.by_text.get(question).map(|&i| &self.questions[i])
    }

    pub fn key_events<'a>(&'a self, q: &'a SimQuestion) -> impl Iterator<Item = &'a SimEvent> + 'a {
        let video = self.video(&q.video_id);
        q.key_events
            .iter()
            .filter_map(move |t| video.and_then(|v| v.events.iter().find(|e| &e.token == t)))
    }

    pub fn p_coverage(&self, q: &SimQuestion) -> f64 {
        q.p_correct_given_coverage
            .unwrap_or(self.policy.p_correct_given_coverage)
    }

    pub fn p_miss(&self, q: &SimQuestion) -> f64 {
        q.p_correct_given_miss.unwrap_or(self.policy.p_correct_given_miss)
    }

    /// Dataset rows for every question, in world order.
    pub fn dataset_rows(&self) -> Vec<DatasetRow> {
        self.questions
            .iter()
            .map(|q| {
                let video = self.video(&q.video_id).expect("validated");
                DatasetRow {
                    id: q.id.clone(),
                    video_id: q.video_id.clone(),
                    n_frames: video.n_frames,
                    fps: video.fps,
                    question: q.question.clone(),
                    options: q.options.clone(),
                    answer: q.answer.to_string(),
                    kind: Some(match q.kind {
                        QuestionKind::Global => "global".into(),
                        QuestionKind::Local => "local".into(),
                    }),
                }
            })
            .collect()
    }

    pub fn dataset_jsonl(&self) -> String {
        let mut out = String::new();
        for row in self.dataset_rows() {
            out.push_str(&serde_json::to_string(&row).expect("row serializes"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod test_world {
    use super::*;

    pub fn label(c: char) -> OptionLabel {
        OptionLabel::from_letter(c).unwrap()
    }

    /// One 800-frame video with a local question (event in segment 5) and a
    /// global counting question (events in segments 1 and 3).
    pub fn small_world(policy: SimPolicy) -> World {
        let events = vec![
            SimEvent {
                token: "k5".into(),
                lo: 520,
                hi: 540,
                description: "the blue kite".into(),
            },
            SimEvent {
                token: "c1".into(),
                lo: 130,
                hi: 150,
                description: "the red lantern".into(),
            },
            SimEvent {
                token: "c3".into(),
                lo: 330,
                hi: 350,
                description: "the red lantern".into(),
            },
            SimEvent {
                token: "d0".into(),
                lo: 700,
                hi: 720,
                description: "a passing truck".into(),
            },
        ];
        let videos = vec![SyntheticVideo {
            video_id: "v1".into(),
            n_frames: 800,
            fps: 30.0,
            events,
        }];
        let questions = vec![
            SimQuestion {
                id: "local".into(),
                video_id: "v1".into(),
                question: "What color is the tail of the blue kite?".into(),
                options: vec!["red".into(), "green".into(), "white".into(), "black".into()],
                answer: label('C'),
                kind: QuestionKind::Local,
                key_events: vec!["k5".into()],
                lure: Some(label('A')),
                p_correct_given_coverage: None,
                p_correct_given_miss: None,
            },
            SimQuestion {
                id: "global".into(),
                video_id: "v1".into(),
                question: "How many times does the red lantern appear?".into(),
                options: vec!["3".into(), "1".into(), "2".into(), "4".into()],
                answer: label('C'),
                kind: QuestionKind::Global,
                key_events: vec!["c1".into(), "c3".into()],
                lure: Some(label('B')),
                p_correct_given_coverage: None,
                p_correct_given_miss: None,
            },
        ];
        World::new(11, policy, videos, questions).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_world::*;
    use super::*;

    #[test]
    fn world_json_round_trips() {
        let world = small_world(SimPolicy::default());
        let back = World::from_json_str(&world.to_json_string()).unwrap();
        assert_eq!(back, world);
        assert!(back
            .question_for("v1", "How many times does the red lantern appear?")
            .is_some());
    }

    #[test]
    fn schema_errors_name_the_field() {
        let world = small_world(SimPolicy::default());
        let mut value: serde_json::Value = serde_json::from_str(&world.to_json_string()).unwrap();
        value["videos"][0].as_object_mut().unwrap().remove("n_frames");
        let err = World::from_json_str(&value.to_string()).unwrap_err();
        assert!(err.to_string().contains("n_frames"), "{err}");

        let mut bad = world.clone();
        bad.questions[1].answer = label('A');
        let err = World::new(1, bad.policy, bad.videos, bad.questions).unwrap_err();
        assert!(err.to_string().contains("questions[1].answer"), "{err}");

        let mut bad = world.clone();
        bad.videos[0].events[0].hi = 900;
        let err = World::new(1, bad.policy, bad.videos, bad.questions).unwrap_err();
        assert!(err.to_string().contains("videos[0].events[0]"), "{err}");

        let mut bad = world;
        bad.policy.p_correct_given_miss = 1.5;
        let err = World::new(1, bad.policy, bad.videos, bad.questions).unwrap_err();
        assert!(err.to_string().contains("policy.p_correct_given_miss"), "{err}");
    }

    #[test]
    fn dataset_rows_match_questions() {
        let world = small_world(SimPolicy::default());
        let rows = world.dataset_rows();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].answer, "C");
        assert_eq!(rows[1].n_frames, 800);
        assert_eq!(world.dataset_jsonl().lines().count(), 2);
    }
}
