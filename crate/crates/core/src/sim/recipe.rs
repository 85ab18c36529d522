//! Deterministic world generation.
//!
//! Each question gets its own video. Local questions have one key event;
//! global questions count 1 to `max_count` appearances of the same thing,
//! one per segment. Every event sits inside a single segment of the
//! `segments`-way split, so refocusing can find it. Decoy events add noise
//! to the narration without changing any answer.

use serde::{Deserialize, Serialize};

use crate::protocol::OptionLabel;
use crate::rng::{rng_from_seed, uniform_below, unit_f64, SeededRng};
use crate::sampling::{split_segments, VideoMeta};
use crate::voting::QuestionKind;

use super::{SimError, SimEvent, SimPolicy, SimQuestion, SyntheticVideo, World};

const OBJECTS: [&str; 12] = [
    "kite", "lantern", "bicycle", "umbrella", "violin", "backpack", "teapot", "scooter", "parrot", "ladder", "drone",
    "suitcase",
];
const COLORS: [&str; 10] = [
    "red", "blue", "green", "yellow", "white", "black", "orange", "purple", "grey", "brown",
];
const DECOYS: [&str; 6] = [
    "a passing truck",
    "a crowd cheering",
    "a closed door",
    "rain on a window",
    "a barking dog",
    "a street sign",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldRecipe {
    pub seed: u64,
    pub n_questions: usize,
    pub min_frames: u64,
    pub max_frames: u64,
    pub fps: f64,
    pub n_options: usize,
    pub global_fraction: f64,
    pub max_count: usize,
    pub event_width: u64,
    pub decoys_per_video: usize,
    pub segments: usize,
    /// When set, each question draws `q` uniformly from `[lo, hi]` and
    /// answers correctly with probability `q` whether or not it sees a key event.
    pub q_range: Option<[f64; 2]>,
    /// Share of questions answered correctly with probability `easy_p`
    /// regardless of the frames; these mostly end in consensus.
    pub easy_fraction: f64,
    pub easy_p: f64,
    pub policy: SimPolicy,
}

impl Default for WorldRecipe {
    fn default() -> Self {
        WorldRecipe {
            seed: 0,
            n_questions: 100,
            min_frames: 2400,
            max_frames: 4800,
            fps: 30.0,
            n_options: 4,
            global_fraction: 0.4,
            max_count: 4,
            event_width: 24,
            decoys_per_video: 2,
            segments: 8,
            q_range: None,
            easy_fraction: 0.0,
            easy_p: 0.99,
            policy: SimPolicy::default(),
        }
    }
}

fn pick<'a, T>(rng: &mut SeededRng, items: &'a [T]) -> &'a T {
    &items[uniform_below(rng, items.len() as u64) as usize]
}

fn shuffle<T>(rng: &mut SeededRng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}

fn label(i: usize) -> OptionLabel {
    OptionLabel::from_index(i).expect("option count validated")
}

impl WorldRecipe {
    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Schema(format!("recipe.{m}")));
        if !(2..=10).contains(&self.n_options) {
            return bad("n_options: must be between 2 and 10".into());
        }
        if self.max_count == 0 || self.max_count > self.n_options || self.max_count > self.segments {
            return bad("max_count: must be in 1..=min(n_options, segments)".into());
        }
        if self.segments == 0 || self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad("min_frames/max_frames/segments: need 1 <= min_frames <= max_frames and segments >= 1".into());
        }
        if self.event_width == 0 || self.event_width > self.min_frames / self.segments as u64 {
            return bad("event_width: must fit inside the shortest segment".into());
        }
        if !(0.0..=1.0).contains(&self.global_fraction) {
            return bad("global_fraction: must be in [0, 1]".into());
        }
        if let Some([lo, hi]) = self.q_range {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad("q_range: need 0 <= lo <= hi <= 1".into());
            }
        }
        if !(0.0..=1.0).contains(&self.easy_fraction) || !(0.0..=1.0).contains(&self.easy_p) {
            return bad("easy_fraction/easy_p: must be in [0, 1]".into());
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad("fps: must be > 0".into());
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<World, SimError> {
        self.validate()?;
        let mut rng = rng_from_seed(self.seed);
        let mut videos = Vec::with_capacity(self.n_questions);
        let mut questions = Vec::with_capacity(self.n_questions);
        for i in 0..self.n_questions {
            let (video, question) = self.generate_one(i, &mut rng);
            videos.push(video);
            questions.push(question);
        }
        World::new(self.seed, self.policy.clone(), videos, questions)
    }

    fn generate_one(&self, i: usize, rng: &mut SeededRng) -> (SyntheticVideo, SimQuestion) {
        let n_frames = self.min_frames + uniform_below(rng, self.max_frames - self.min_frames + 1);
        let video_id = format!("vid{i:05}");
        let meta = VideoMeta::new(video_id.clone(), n_frames, self.fps).expect("validated");
        let segments = split_segments(&meta, self.segments).expect("validated");
        let object = pick(rng, &OBJECTS);
        let color = pick(rng, &COLORS);
        let description = format!("the {color} {object} #{i}");

        let place = |seg_index: usize, rng: &mut SeededRng| {
            let seg = segments[seg_index];
            let lo = seg.lo + uniform_below(rng, seg.len() - self.event_width + 1);
            (lo, lo + self.event_width)
        };

        let global = unit_f64(rng) < self.global_fraction;
        let mut order: Vec<usize> = (0..self.segments).collect();
        shuffle(rng, &mut order);
        let count = if global {
            1 + uniform_below(rng, self.max_count as u64) as usize
        } else {
            1
        };
        let mut events = Vec::new();
        let mut key_events = Vec::new();
        for (j, &seg) in order.iter().take(count).enumerate() {
            let (lo, hi) = place(seg, rng);
            let token = format!("e{i}-{j}");
            key_events.push(token.clone());
            events.push(SimEvent {
                token,
                lo,
                hi,
                description: description.clone(),
            });
        }
        for d in 0..self.decoys_per_video {
            let seg = uniform_below(rng, self.segments as u64) as usize;
            let (lo, hi) = place(seg, rng);
            events.push(SimEvent {
                token: format!("d{i}-{d}"),
                lo,
                hi,
                description: pick(rng, &DECOYS).to_string(),
            });
        }
        events.sort_by_key(|e| e.lo);

        let n = self.n_options;
        let (question, options, answer, lure, kind) = if global {
            let mut numbers: Vec<usize> = (1..=n).collect();
            shuffle(rng, &mut numbers);
            let answer = numbers.iter().position(|&v| v == count).expect("count <= n_options");
            // A near-miss count is the most tempting wrong answer.
            let near = if count > 1 { count - 1 } else { count + 1 };
            let lure = numbers
                .iter()
                .position(|&v| v == near)
                .expect("near count within options");
            (
                format!("How many times does {description} appear in the video?"),
                numbers.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                answer,
                lure,
                QuestionKind::Global,
            )
        } else {
            let mut palette: Vec<&str> = COLORS.to_vec();
            shuffle(rng, &mut palette);
            let answer = uniform_below(rng, n as u64) as usize;
            let lure = (answer + 1 + uniform_below(rng, n as u64 - 1) as usize) % n;
            (
                format!("What color is the tag on {description}?"),
                palette[..n].iter().map(|s| s.to_string()).collect(),
                answer,
                lure,
                QuestionKind::Local,
            )
        };
        let mut q = self.q_range.map(|[lo, hi]| lo + (hi - lo) * unit_f64(rng));
        if self.easy_fraction > 0.0 && unit_f64(rng) < self.easy_fraction {
            q = Some(self.easy_p);
        }
        (
            SyntheticVideo {
                video_id: video_id.clone(),
                n_frames,
                fps: self.fps,
                events,
            },
            SimQuestion {
                id: format!("q{i:05}"),
                video_id,
                question,
                options,
                answer: label(answer),
                kind,
                key_events,
                lure: Some(label(lure)),
                p_correct_given_coverage: q,
                p_correct_given_miss: q,
            },
        )
    }
}
