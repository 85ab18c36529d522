//! Prompt templates for the contextual-voting calls.
//!
//! Templates are plain UTF-8 files with `{placeholder}` slots. The built-in
//! set is compiled in from `prompts/`; a directory holding files with the
//! same names overrides it. Each template opens with a `Task: ...` line that
//! names the call.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot read prompt template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template {name} is missing placeholder {{{placeholder}}}")]
    MissingPlaceholder {
        name: &'static str,
        placeholder: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub categorize: String,
    pub keyinfo: String,
    pub narrate: String,
    pub summarize: String,
    pub localize: String,
}

const REQUIRED: [(&str, &[&str]); 5] = [
    ("categorize", &["question", "options"]),
    ("keyinfo", &["question"]),
    ("narrate", &["key_info", "question"]),
    ("summarize", &["clues", "question", "options"]),
    ("localize", &["question"]),
];

impl PromptSet {
    pub fn builtin() -> Self {
        PromptSet {
            categorize: include_str!("../prompts/categorize.txt").to_string(),
            keyinfo: include_str!("../prompts/keyinfo.txt").to_string(),
            narrate: include_str!("../prompts/narrate.txt").to_string(),
            summarize: include_str!("../prompts/summarize.txt").to_string(),
            localize: include_str!("../prompts/localize.txt").to_string(),
        }
    }

    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            let path = dir.join(format!("{name}.txt"));
            std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                path: path.display().to_string(),
                source,
            })
        };
        let set = PromptSet {
            categorize: read("categorize")?,
            keyinfo: read("keyinfo")?,
            narrate: read("narrate")?,
            summarize: read("summarize")?,
            localize: read("localize")?,
        };
        set.validate()?;
        Ok(set)
    }

    fn by_name(&self, name: &str) -> &str {
        match name {
            "categorize" => &self.categorize,
            "keyinfo" => &self.keyinfo,
            "narrate" => &self.narrate,
            "summarize" => &self.summarize,
            _ => &self.localize,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for (name, placeholders) in REQUIRED {
            let text = self.by_name(name);
            for &placeholder in placeholders {
                if !text.contains(&format!("{{{placeholder}}}")) {
                    return Err(PromptError::MissingPlaceholder { name, placeholder });
                }
            }
        }
        Ok(())
    }
}

/// Substitutes `{name}` slots; unknown slots are left as they are.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in values {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

/// `A. first\nB. second` listing.
pub fn format_options(options: &[String]) -> String {
    let mut out = String::new();
    for (i, text) in options.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let letter = char::from(b'A' + i as u8);
        let _ = write!(out, "{letter}. {text}");
    }
    out
}

/// One `Segment t: clue` line per segment.
pub fn format_clues(clues: &[String]) -> String {
    clues
        .iter()
        .enumerate()
        .map(|(t, c)| format!("Segment {}: {}", t + 1, c.trim()))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates_are_complete() {
        PromptSet::builtin().validate().unwrap();
    }

    #[test]
    fn render_substitutes_all_slots() {
        let out = render(
            "Q: {question} / {options} / {other}",
            &[("question", "why?"), ("options", "A. x")],
        );
        assert_eq!(out, "Q: why? / A. x / {other}");
    }

    #[test]
    fn options_and_clues_formatting() {
        assert_eq!(format_options(&["red".into(), "blue".into()]), "A. red\nB. blue");
        assert_eq!(
            format_clues(&["NONE".into(), " a kite ".into()]),
            "Segment 1: NONE\nSegment 2: a kite"
        );
    }

    #[test]
    fn override_directory_is_validated() {
        let dir = tempfile::tempdir().unwrap();
        let builtin = PromptSet::builtin();
        for (name, _) in REQUIRED {
            std::fs::write(dir.path().join(format!("{name}.txt")), builtin.by_name(name)).unwrap();
        }
        assert_eq!(PromptSet::from_dir(dir.path()).unwrap(), builtin);
        std::fs::write(dir.path().join("narrate.txt"), "Task: clue narration.\nno slots").unwrap();
        assert!(matches!(
            PromptSet::from_dir(dir.path()),
            Err(PromptError::MissingPlaceholder { name: "narrate", .. })
        ));
        std::fs::remove_file(dir.path().join("keyinfo.txt")).unwrap();
        assert!(matches!(PromptSet::from_dir(dir.path()), Err(PromptError::Io { .. })));
    }
}
