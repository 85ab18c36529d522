//! Run configuration, loaded from TOML.
//!
//! Every key has a default, so an empty file is a valid configuration that
//! samples 10 predictions of 32 bin-wise frames, scores with alpha = 1 and
//! beta = 3, and splits the video into 8 segments for contextual voting.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::Strategy;
use crate::scoring::{ConfidenceVariant, InterAggregation, IntraConfidence};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub strategy: Strategy,
    pub n_samples: u32,
    pub frames_per_sample: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            strategy: Strategy::BinWise,
            n_samples: 10,
            frames_per_sample: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub alpha: f64,
    pub beta: f64,
    pub intra: IntraConfidence,
    pub inter: InterAggregation,
}

impl ScoringConfig {
    pub fn confidence(&self) -> ConfidenceVariant {
        ConfidenceVariant {
            intra: self.intra,
            inter: self.inter,
        }
    }
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            alpha: 1.0,
            beta: 3.0,
            intra: IntraConfidence::Marginal,
            inter: InterAggregation::Max,
        }
    }
}

/// How a segment's localization probe is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeScore {
    /// Raw first-token logit of the affirmative answer.
    Yes,
    /// Affirmative minus negative logit.
    YesMinusNo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VotingConfig {
    pub segments: usize,
    pub frames_per_segment: usize,
    /// Only options present among the sampled predictions may be selected.
    pub restrict_to_sampled: bool,
    pub probe_score: ProbeScore,
}

impl Default for VotingConfig {
    fn default() -> Self {
        VotingConfig {
            segments: 8,
            frames_per_segment: 32,
            restrict_to_sampled: false,
            probe_score: ProbeScore::Yes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecConfig {
    pub seed: u64,
    pub workers: usize,
    /// Count questions whose every sample failed as wrong (true) or leave them out (false).
    pub strict: bool,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            seed: 0,
            workers: 4,
            strict: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    /// Remote servers speaking the JSON protocol.
    Http,
    /// The simulated world, in process.
    Sim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub video_endpoint: String,
    pub text_endpoint: String,
    /// World file for `kind = "sim"`.
    pub world: Option<PathBuf>,
    pub timeout_ms: u64,
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            video_endpoint: "http://127.0.0.1:8080".into(),
            text_endpoint: "http://127.0.0.1:8080".into(),
            world: None,
            timeout_ms: 30_000,
            retries: 3,
            backoff_ms: 200,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    /// Directory overriding the built-in prompt templates.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sampling: SamplingConfig,
    pub scoring: ScoringConfig,
    pub voting: VotingConfig,
    pub run: ExecConfig,
    pub backend: BackendConfig,
    pub prompts: PromptConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative `backend.world` and `prompts.dir` paths
    /// resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(world) = cfg.backend.world.as_mut() {
            if world.is_relative() {
                *world = base.join(&*world);
            }
        }
        if let Some(dir) = cfg.prompts.dir.as_mut() {
            if dir.is_relative() {
                *dir = base.join(&*dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if self.sampling.n_samples == 0 {
            return bad("sampling.n_samples must be >= 1");
        }
        if self.sampling.frames_per_sample == 0 {
            return bad("sampling.frames_per_sample must be >= 1");
        }
        if self.sampling.strategy == Strategy::SegmentUniform {
            return bad("sampling.strategy segment_uniform is only used inside contextual voting");
        }
        if !(self.scoring.alpha.is_finite() && self.scoring.alpha >= 0.0) {
            return bad("scoring.alpha must be a finite number >= 0");
        }
        if !(self.scoring.beta.is_finite() && self.scoring.beta >= 0.0) {
            return bad("scoring.beta must be a finite number >= 0");
        }
        if self.voting.segments == 0 || self.voting.frames_per_segment == 0 {
            return bad("voting.segments and voting.frames_per_segment must be >= 1");
        }
        if self.run.workers == 0 {
            return bad("run.workers must be >= 1");
        }
        if self.backend.kind == BackendKind::Sim && self.backend.world.is_none() {
            return bad("backend.world is required when backend.kind = \"sim\"");
        }
        Ok(())
    }
}
