//! Frame sampling, self-reward selection and contextual voting for video
//! multiple-choice QA, plus a deterministic simulated backend and an
//! evaluation harness.

pub mod config;
pub mod eval;
pub mod http;
pub mod prompts;
pub mod protocol;
pub mod rng;
pub mod sampling;
pub mod scoring;
pub mod sim;
pub mod voting;

pub use config::{BackendKind, ConfigError, RunConfig};
pub use eval::{EvalError, QaItem, RunReport};
pub use protocol::{BackendError, OptionLabel, TextModel, VideoModel};
pub use sampling::{FrameSchedule, Strategy, VideoMeta};
pub use scoring::{Prediction, PredictionSet, ScoreBreakdown};
