//! JSONL question datasets.
//!
//! One object per line:
//!
//! ```json
//! {"id":"q1","video_id":"v1","n_frames":5400,"fps":30,"question":"...","options":["..","..",".."],"answer":"B","type":"local"}
//! ```
//!
//! `type` is optional (`global`, `local` or `unknown`). Bad lines are
//! collected; loading fails when more than 1% of the lines are bad.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::protocol::OptionLabel;
use crate::sampling::VideoMeta;

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRow {
    pub id: String,
    pub video_id: String,
    pub n_frames: u64,
    pub fps: f64,
    pub question: String,
    pub options: Vec<String>,
    pub answer: String,
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclaredType {
    Global,
    Local,
    Unknown,
}

/// One multiple-choice question about one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub video: VideoMeta,
    pub question: String,
    pub options: Vec<String>,
    pub truth: OptionLabel,
    pub declared_type: Option<DeclaredType>,
}

impl TryFrom<DatasetRow> for QaItem {
    type Error = String;

    fn try_from(row: DatasetRow) -> Result<Self, String> {
        if row.id.trim().is_empty() {
            return Err("id: empty".into());
        }
        let video = VideoMeta::new(row.video_id, row.n_frames, row.fps).map_err(|e| e.to_string())?;
        if !(2..=6).contains(&row.options.len()) {
            return Err(format!("options: expected 2 to 6, got {}", row.options.len()));
        }
        let distinct: HashSet<&str> = row.options.iter().map(|o| o.trim()).collect();
        if distinct.len() != row.options.len() {
            return Err("options: duplicate option text".into());
        }
        let truth: OptionLabel = row.answer.trim().parse().map_err(|e| format!("answer: {e}"))?;
        if truth.index() >= row.options.len() {
            return Err(format!(
                "answer: {truth} is out of range for {} options",
                row.options.len()
            ));
        }
        let declared_type = match row.kind.as_deref() {
            None => None,
            Some("global") => Some(DeclaredType::Global),
            Some("local") => Some(DeclaredType::Local),
            Some("unknown") => Some(DeclaredType::Unknown),
            Some(other) => return Err(format!("type: unknown value {other:?}")),
        };
        Ok(QaItem {
            id: row.id,
            video,
            question: row.question,
            options: row.options,
            truth,
            declared_type,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedLine {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub items: Vec<QaItem>,
    pub rejected: Vec<RejectedLine>,
}

/// Largest tolerated share of malformed lines.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

pub fn parse_dataset(text: &str) -> Result<Dataset, EvalError> {
    let mut dataset = Dataset::default();
    let mut ids = HashSet::new();
    let mut lines = 0usize;
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        lines += 1;
        let line = i + 1;
        let parsed = serde_json::from_str::<DatasetRow>(raw)
            .map_err(|e| e.to_string())
            .and_then(QaItem::try_from)
            .and_then(|item| {
                if ids.insert(item.id.clone()) {
                    Ok(item)
                } else {
                    Err(format!("id: duplicate {:?}", item.id))
                }
            });
        match parsed {
            Ok(item) => dataset.items.push(item),
            Err(message) => dataset.rejected.push(RejectedLine { line, message }),
        }
    }
    if lines == 0 {
        log::warn!("dataset is empty");
    }
    if !dataset.rejected.is_empty() {
        let listing = dataset
            .rejected
            .iter()
            .take(5)
            .map(|r| format!("line {}: {}", r.line, r.message))
            .collect::<Vec<_>>()
            .join("; ");
        if dataset.rejected.len() as f64 > MAX_MALFORMED_FRACTION * lines as f64 {
            return Err(EvalError::Schema(format!(
                "{} of {lines} dataset lines are malformed: {listing}",
                dataset.rejected.len()
            )));
        }
        log::warn!("skipping {} malformed dataset lines: {listing}", dataset.rejected.len());
    }
    Ok(dataset)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(&text)
}
