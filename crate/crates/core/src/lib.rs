//! Caption-based long-range video question answering.
//!
//! The pipeline turns pre-extracted short-clip captions into LLM prompts,
//! drives a chat-completion backend (live, mock or replay-only), parses the
//! answers and grounding intervals, and scores them.
//!
//! Modules follow the data flow:
//! [`corpus`] → [`sampler`] → [`prompt`] → [`backend`] → [`parse`] → [`metrics`],
//! with [`runner`] binding them into resumable experiment runs.

pub mod backend;
pub mod clock;
pub mod corpus;
pub mod metrics;
pub mod parse;
pub mod prompt;
pub mod retry;
pub mod runner;
pub mod sampler;

pub use backend::{CompletionRecord, CompletionRequest, Executor, RatePolicy};
pub use corpus::{CaptionTrack, CategoryMap, ClipCaption, GroundingLabel, QaItem};
pub use metrics::{EvalReport, ItemResult};
pub use parse::{ChoiceOutcome, IntervalPrediction};
pub use prompt::{ChatTurn, PromptPlan, Strategy};
pub use runner::{ExperimentConfig, RunOutcome};
pub use sampler::{CaptionBlock, SamplerConfig};
