//! Wire types and client traits for the two backends: the video model that
//! answers questions over a set of frames, and the text-only language model
//! used for categorization, narration summaries and question rewriting.
//!
//! Requests and responses are plain JSON. `option_logits` is keyed by option
//! letter and must hold pre-softmax first-token logits: margins are taken as
//! raw differences, so log-probabilities would rescale the confidence score.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Upper bound on options per question (A through Z).
pub const MAX_OPTIONS: usize = 26;

/// A multiple-choice option letter. Ordering is alphabetical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OptionLabel(u8);

impl OptionLabel {
    pub fn from_index(index: usize) -> Option<Self> {
        (index < MAX_OPTIONS).then_some(OptionLabel(index as u8))
    }

    pub fn from_letter(letter: char) -> Option<Self> {
        letter.is_ascii_uppercase().then(|| OptionLabel(letter as u8 - b'A'))
    }

    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn letter(self) -> char {
        char::from(b'A' + self.0)
    }

    /// Labels `A..` for a question with `n` options.
    pub fn all(n: usize) -> impl Iterator<Item = OptionLabel> {
        (0..n.min(MAX_OPTIONS)).map(|i| OptionLabel(i as u8))
    }
}

impl fmt::Display for OptionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

impl FromStr for OptionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => OptionLabel::from_letter(c).ok_or_else(|| format!("invalid option letter {s:?}")),
            _ => Err(format!("invalid option letter {s:?}")),
        }
    }
}

impl Serialize for OptionLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut buf = [0u8; 4];
        serializer.serialize_str(self.letter().encode_utf8(&mut buf))
    }
}

impl<'de> Deserialize<'de> for OptionLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Decoding parameters; the engine always asks for greedy decoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decode {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for Decode {
    fn default() -> Self {
        Decode {
            temperature: 0.0,
            top_p: 0.0,
        }
    }
}

/// A question over a set of frames.
///
/// Multiple-choice requests carry the option texts; free-form narration
/// requests carry an empty option list and never ask for logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoQaRequest {
    pub video_id: String,
    pub frame_indices: Vec<u64>,
    pub question_text: String,
    pub options: Vec<String>,
    pub want_logits: bool,
    #[serde(default)]
    pub decode: Decode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoQaResponse {
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_logits: Option<BTreeMap<OptionLabel, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yes_logit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_logit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextLmRequest {
    pub prompt: String,
    #[serde(default)]
    pub decode: Decode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextLmResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend error: {0}")]
    Backend(String),
}

pub trait VideoModel: Send + Sync {
    fn video_qa(&self, req: &VideoQaRequest) -> Result<VideoQaResponse, BackendError>;
}

pub trait TextModel: Send + Sync {
    fn complete(&self, req: &TextLmRequest) -> Result<TextLmResponse, BackendError>;
}

impl<T: VideoModel + ?Sized> VideoModel for &T {
    fn video_qa(&self, req: &VideoQaRequest) -> Result<VideoQaResponse, BackendError> {
        (**self).video_qa(req)
    }
}

impl<T: TextModel + ?Sized> TextModel for &T {
    fn complete(&self, req: &TextLmRequest) -> Result<TextLmResponse, BackendError> {
        (**self).complete(req)
    }
}

impl<T: VideoModel + ?Sized> VideoModel for std::sync::Arc<T> {
    fn video_qa(&self, req: &VideoQaRequest) -> Result<VideoQaResponse, BackendError> {
        (**self).video_qa(req)
    }
}

impl<T: TextModel + ?Sized> TextModel for std::sync::Arc<T> {
    fn complete(&self, req: &TextLmRequest) -> Result<TextLmResponse, BackendError> {
        (**self).complete(req)
    }
}

/// Number of backend calls, split by model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    pub video_qa: u64,
    pub text_lm: u64,
}

/// Pass-through wrapper that counts every call made through it.
pub struct Instrumented<'a> {
    video: &'a dyn VideoModel,
    text: &'a dyn TextModel,
    video_calls: AtomicU64,
    text_calls: AtomicU64,
}

impl<'a> Instrumented<'a> {
    pub fn new(video: &'a dyn VideoModel, text: &'a dyn TextModel) -> Self {
        Instrumented {
            video,
            text,
            video_calls: AtomicU64::new(0),
            text_calls: AtomicU64::new(0),
        }
    }

    pub fn counts(&self) -> CallCounts {
        CallCounts {
            video_qa: self.video_calls.load(Ordering::Relaxed),
            text_lm: self.text_calls.load(Ordering::Relaxed),
        }
    }
}

impl VideoModel for Instrumented<'_> {
    fn video_qa(&self, req: &VideoQaRequest) -> Result<VideoQaResponse, BackendError> {
        self.video_calls.fetch_add(1, Ordering::Relaxed);
        self.video.video_qa(req)
    }
}

impl TextModel for Instrumented<'_> {
    fn complete(&self, req: &TextLmRequest) -> Result<TextLmResponse, BackendError> {
        self.text_calls.fetch_add(1, Ordering::Relaxed);
        self.text.complete(req)
    }
}

/// Extracts the option letter from a verbalized answer.
///
/// Scans left to right for the first uppercase letter within the option
/// range that stands alone: not adjacent to another letter or digit, with
/// `(B)`, `B.` and `B)` all accepted. Returns `None` when nothing matches.
pub fn parse_option(raw_text: &str, n_options: usize) -> Option<OptionLabel> {
    let chars: Vec<char> = raw_text.trim().chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let Some(label) = OptionLabel::from_letter(c) else {
            continue;
        };
        if label.index() >= n_options {
            continue;
        }
        let before_ok = i == 0 || !chars[i - 1].is_alphanumeric();
        let after_ok = chars.get(i + 1).is_none_or(|n| !n.is_alphanumeric());
        if before_ok && after_ok {
            return Some(label);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogitError {
    #[error("response carries no option logits")]
    MissingLogits,
    #[error("need logits for at least two options, got {0}")]
    TooFewLogits(usize),
}

/// Top option of one response and its first-token logit margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitSummary {
    pub best: OptionLabel,
    /// `l_max - l_second`, both taken over option-letter logits.
    pub margin: f64,
    pub max_logit: f64,
}

/// Argmax option (ties go to the earliest letter) and its margin over the runner-up.
pub fn extract_margin(resp: &VideoQaResponse) -> Result<LogitSummary, LogitError> {
    let logits = resp.option_logits.as_ref().ok_or(LogitError::MissingLogits)?;
    if logits.len() < 2 {
        return Err(LogitError::TooFewLogits(logits.len()));
    }
    let mut iter = logits.iter();
    let (&first_label, &first) = iter.next().expect("len checked");
    let mut best = (first_label, first);
    let mut second = f64::NEG_INFINITY;
    for (&label, &value) in iter {
        if value > best.1 {
            second = best.1;
            best = (label, value);
        } else if value > second {
            second = value;
        }
    }
    Ok(LogitSummary {
        best: best.0,
        margin: best.1 - second,
        max_logit: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn label(c: char) -> OptionLabel {
        OptionLabel::from_letter(c).unwrap()
    }

    fn with_logits(pairs: &[(char, f64)]) -> VideoQaResponse {
        VideoQaResponse {
            raw_text: String::new(),
            option_logits: Some(pairs.iter().map(|&(c, v)| (label(c), v)).collect()),
            yes_logit: None,
            no_logit: None,
        }
    }

    #[test]
    fn parse_option_examples() {
        assert_eq!(parse_option("The answer is (B).", 4), Some(label('B')));
        assert_eq!(parse_option("C", 4), Some(label('C')));
        assert_eq!(parse_option("I cannot determine this.", 4), None);
        assert_eq!(parse_option("  D) because", 4), Some(label('D')));
        assert_eq!(parse_option("Answer: A.", 4), Some(label('A')));
        assert_eq!(parse_option("E", 4), None);
        assert_eq!(parse_option("b", 4), None);
        assert_eq!(parse_option("AB", 4), None);
        assert_eq!(parse_option("B2", 4), None);
        assert_eq!(parse_option("", 4), None);
    }

    #[test]
    fn extract_margin_examples() {
        let s = extract_margin(&with_logits(&[('A', 5.0), ('B', 3.0), ('C', 1.0)])).unwrap();
        assert_eq!((s.best, s.margin, s.max_logit), (label('A'), 2.0, 5.0));
        let s = extract_margin(&with_logits(&[('A', 2.0), ('B', 2.0)])).unwrap();
        assert_eq!((s.best, s.margin), (label('A'), 0.0));
        let s = extract_margin(&with_logits(&[('A', 1.0), ('B', 4.0), ('C', 3.5), ('D', 0.0)])).unwrap();
        assert_eq!((s.best, s.margin), (label('B'), 0.5));
    }

    #[test]
    fn extract_margin_errors() {
        let mut resp = with_logits(&[]);
        resp.option_logits = None;
        assert_eq!(extract_margin(&resp), Err(LogitError::MissingLogits));
        assert_eq!(
            extract_margin(&with_logits(&[('A', 1.0)])),
            Err(LogitError::TooFewLogits(1))
        );
    }

    #[test]
    fn response_without_logits_deserializes() {
        let resp: VideoQaResponse = serde_json::from_str(r#"{"raw_text":"B"}"#).unwrap();
        assert_eq!(resp.option_logits, None);
        let resp: VideoQaResponse =
            serde_json::from_str(r#"{"raw_text":"B","option_logits":{"A":1.5,"B":2.5}}"#).unwrap();
        assert_eq!(resp.option_logits.unwrap()[&label('B')], 2.5);
    }

    #[test]
    fn bad_option_key_is_rejected() {
        let err = serde_json::from_str::<VideoQaResponse>(r#"{"raw_text":"x","option_logits":{"AA":1.0}}"#);
        assert!(err.is_err());
    }

    #[test]
    fn instrumented_counts_calls() {
        struct Echo;
        impl VideoModel for Echo {
            fn video_qa(&self, _: &VideoQaRequest) -> Result<VideoQaResponse, BackendError> {
                Ok(VideoQaResponse {
                    raw_text: "A".into(),
                    option_logits: None,
                    yes_logit: None,
                    no_logit: None,
                })
            }
        }
        impl TextModel for Echo {
            fn complete(&self, _: &TextLmRequest) -> Result<TextLmResponse, BackendError> {
                Ok(TextLmResponse { text: "ok".into() })
            }
        }
        let inst = Instrumented::new(&Echo, &Echo);
        let req = VideoQaRequest {
            video_id: "v".into(),
            frame_indices: vec![0],
            question_text: "q".into(),
            options: vec!["x".into(), "y".into()],
            want_logits: false,
            decode: Decode::default(),
        };
        inst.video_qa(&req).unwrap();
        inst.video_qa(&req).unwrap();
        inst.complete(&TextLmRequest {
            prompt: "p".into(),
            decode: Decode::default(),
        })
        .unwrap();
        assert_eq!(
            inst.counts(),
            CallCounts {
                video_qa: 2,
                text_lm: 1
            }
        );
    }

    fn arb_label() -> impl Strategy<Value = OptionLabel> {
        (0usize..MAX_OPTIONS).prop_map(|i| OptionLabel::from_index(i).unwrap())
    }

    proptest! {
        #[test]
        fn parse_is_idempotent_on_rendered_labels(l in arb_label()) {
            prop_assert_eq!(parse_option(&l.to_string(), MAX_OPTIONS), Some(l));
            prop_assert_eq!(parse_option(&format!("({l})"), MAX_OPTIONS), Some(l));
        }

        #[test]
        fn margin_is_never_negative(values in proptest::collection::vec(-50.0f64..50.0, 2..8)) {
            let resp = VideoQaResponse {
                raw_text: String::new(),
                option_logits: Some(values.iter().enumerate()
                    .map(|(i, &v)| (OptionLabel::from_index(i).unwrap(), v)).collect()),
                yes_logit: None,
                no_logit: None,
            };
            let s = extract_margin(&resp).unwrap();
            prop_assert!(s.margin >= 0.0);
            prop_assert!(values.iter().all(|&v| v <= s.max_logit));
        }

        #[test]
        fn wire_types_round_trip(
            video_id in "[a-z0-9_-]{1,12}",
            frames in proptest::collection::vec(0u64..1_000_000, 0..40),
            question in "\\PC{0,60}",
            options in proptest::collection::vec("\\PC{1,20}", 0..6),
            want_logits: bool,
            logits in proptest::option::of(proptest::collection::btree_map(arb_label(), -1e6f64..1e6, 0..6)),
            yes in proptest::option::of(-100f64..100.0),
        ) {
            let req = VideoQaRequest {
                video_id, frame_indices: frames, question_text: question, options, want_logits,
                decode: Decode::default(),
            };
            let back: VideoQaRequest = serde_json::from_str(&serde_json::to_string(&req).unwrap()).unwrap();
            prop_assert_eq!(back, req);
            let resp = VideoQaResponse { raw_text: "x".into(), option_logits: logits, yes_logit: yes, no_logit: yes.map(|y| -y) };
            let back: VideoQaResponse = serde_json::from_str(&serde_json::to_string(&resp).unwrap()).unwrap();
            prop_assert_eq!(back, resp);
        }
    }
}
