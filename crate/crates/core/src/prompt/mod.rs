//! Prompt strategies rendered as ordered chat rounds.
//!
//! A [`PromptPlan`] is built before any backend call. Rounds that depend on
//! an earlier answer (the summary, or the rationale the re-ask follows up on)
//! keep that slot open until [`PromptPlan::conversation`] is given the
//! earlier outputs.

mod template;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QaItem, NUM_OPTIONS};
use crate::sampler::CaptionBlock;

pub use template::{Template, TemplateError, TemplateSet};

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("empty {0} text")]
    Empty(&'static str),
    #[error("grounding prompts need a frame-numbered caption block")]
    UnnumberedBlock,
    #[error("summary word count must be >= 1")]
    ZeroWords,
    #[error("round {round} needs the output of round {needs}, but only {have} outputs are available")]
    MissingOutput { round: usize, needs: usize, have: usize },
    #[error("round {0} output is empty and cannot be substituted into the next round")]
    EmptyOutput(usize),
    #[error("round {0} does not exist")]
    NoSuchRound(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn user(content: impl Into<String>) -> Result<Self, PromptError> {
        Self::new(Role::User, content.into())
    }

    pub fn assistant(content: impl Into<String>) -> Result<Self, PromptError> {
        Self::new(Role::Assistant, content.into())
    }

    fn new(role: Role, content: String) -> Result<Self, PromptError> {
        if content.trim().is_empty() {
            return Err(PromptError::Empty("turn"));
        }
        Ok(Self { role, content })
    }
}

/// Which inputs the summarization round sees besides the captions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SummaryVariant {
    C,
    CQ,
    CQA,
}

impl SummaryVariant {
    fn template(self) -> &'static str {
        match self {
            Self::C => "summarize_c",
            Self::CQ => "summarize_cq",
            Self::CQA => "summarize_cqa",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    Standard,
    SummarizeThenAnswer {
        variant: SummaryVariant,
        n_words: u32,
    },
    ZeroShotCot,
    PlanAndSolve,
    Grounding,
}

impl Strategy {
    pub fn rounds(&self) -> usize {
        match self {
            Self::Standard | Self::Grounding => 1,
            _ => 2,
        }
    }

    pub fn is_grounding(&self) -> bool {
        matches!(self, Self::Grounding)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Standard => f.write_str("standard"),
            Self::SummarizeThenAnswer { variant, n_words } => {
                write!(f, "summarize({variant:?},{n_words})")
            }
            Self::ZeroShotCot => f.write_str("zero_shot_cot"),
            Self::PlanAndSolve => f.write_str("plan_and_solve"),
            Self::Grounding => f.write_str("grounding"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoundSpec {
    /// A new conversation holding one fully rendered user turn.
    Fresh(ChatTurn),
    /// A new conversation whose user turn wraps the previous round's output.
    FromPrevious { prefix: String, suffix: String },
    /// The previous conversation, its assistant reply, then this user turn.
    Continue(ChatTurn),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptPlan {
    pub strategy: Strategy,
    pub rounds: Vec<RoundSpec>,
}

impl PromptPlan {
    /// The turns sent for `round`, given the outputs of all earlier rounds.
    pub fn conversation(&self, round: usize, outputs: &[String]) -> Result<Vec<ChatTurn>, PromptError> {
        let spec = self.rounds.get(round).ok_or(PromptError::NoSuchRound(round))?;
        let previous = |needs: usize| -> Result<&String, PromptError> {
            let out = outputs.get(needs).ok_or(PromptError::MissingOutput {
                round,
                needs,
                have: outputs.len(),
            })?;
            if out.trim().is_empty() {
                return Err(PromptError::EmptyOutput(needs));
            }
            Ok(out)
        };
        match spec {
            RoundSpec::Fresh(turn) => Ok(vec![turn.clone()]),
            RoundSpec::FromPrevious { prefix, suffix } => {
                let prev = previous(round.checked_sub(1).ok_or(PromptError::NoSuchRound(round))?)?;
                Ok(vec![ChatTurn::user(format!("{prefix}{}{suffix}", prev.trim()))?])
            }
            RoundSpec::Continue(turn) => {
                let before = round.checked_sub(1).ok_or(PromptError::NoSuchRound(round))?;
                let mut turns = self.conversation(before, outputs)?;
                turns.push(ChatTurn::assistant(previous(before)?.clone())?);
                turns.push(turn.clone());
                Ok(turns)
            }
        }
    }
}

/// Renders a clip length as it appears in the prompt, e.g. "1 second", "4 seconds".
pub fn clip_length_phrase(seconds: f64) -> String {
    if seconds == 1.0 {
        "1 second".to_string()
    } else {
        format!("{seconds} seconds")
    }
}

/// Run-level prompt parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSettings {
    /// Fills "The video is ... long".
    #[serde(default = "default_duration")]
    pub duration: String,
    /// Frame rate stated in the grounding prompt.
    #[serde(default = "default_fps")]
    pub fps: String,
}

fn default_duration() -> String {
    "3 minute".into()
}

fn default_fps() -> String {
    "1".into()
}

impl Default for PromptSettings {
    fn default() -> Self {
        Self {
            duration: default_duration(),
            fps: default_fps(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PromptBuilder {
    templates: Arc<TemplateSet>,
    settings: PromptSettings,
}

const OPTION_KEYS: [&str; NUM_OPTIONS] = ["option_a", "option_b", "option_c", "option_d", "option_e"];

impl PromptBuilder {
    pub fn new(templates: Arc<TemplateSet>, settings: PromptSettings) -> Self {
        Self { templates, settings }
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    fn base(&self, qa: &QaItem) -> Result<BTreeMap<&'static str, String>, PromptError> {
        if qa.question.trim().is_empty() {
            return Err(PromptError::Empty("question"));
        }
        let mut b = BTreeMap::new();
        b.insert("duration", self.settings.duration.clone());
        b.insert("question", qa.question.clone());
        for (key, opt) in OPTION_KEYS.iter().zip(&qa.options) {
            if opt.trim().is_empty() {
                return Err(PromptError::Empty("option"));
            }
            b.insert(*key, opt.clone());
        }
        Ok(b)
    }

    fn with_captions(
        &self,
        block: &CaptionBlock,
        qa: &QaItem,
        clip_length_s: f64,
    ) -> Result<BTreeMap<&'static str, String>, PromptError> {
        if block.text.trim().is_empty() {
            return Err(PromptError::Empty("caption block"));
        }
        let mut b = self.base(qa)?;
        b.insert("captions", block.text.clone());
        b.insert("clip_length", clip_length_phrase(clip_length_s));
        Ok(b)
    }

    fn single(&self, strategy: Strategy, text: String) -> Result<PromptPlan, PromptError> {
        Ok(PromptPlan {
            strategy,
            rounds: vec![RoundSpec::Fresh(ChatTurn::user(text)?)],
        })
    }

    pub fn build_standard(
        &self,
        block: &CaptionBlock,
        qa: &QaItem,
        clip_length_s: f64,
    ) -> Result<PromptPlan, PromptError> {
        let b = self.with_captions(block, qa, clip_length_s)?;
        self.single(Strategy::Standard, self.templates.render("standard", &b)?)
    }

    pub fn build_summarize_then_answer(
        &self,
        block: &CaptionBlock,
        qa: &QaItem,
        clip_length_s: f64,
        variant: SummaryVariant,
        n_words: u32,
    ) -> Result<PromptPlan, PromptError> {
        if n_words == 0 {
            return Err(PromptError::ZeroWords);
        }
        let mut b = self.with_captions(block, qa, clip_length_s)?;
        b.insert("num_words", n_words.to_string());
        let round1 = self.templates.render(variant.template(), &b)?;
        let (prefix, suffix) = self
            .templates
            .get("summary_answer")?
            .render_around(&self.base(qa)?, "summary")?;
        Ok(PromptPlan {
            strategy: Strategy::SummarizeThenAnswer { variant, n_words },
            rounds: vec![
                RoundSpec::Fresh(ChatTurn::user(round1)?),
                RoundSpec::FromPrevious { prefix, suffix },
            ],
        })
    }

    fn reasoning_then_reask(
        &self,
        strategy: Strategy,
        template: &str,
        block: &CaptionBlock,
        qa: &QaItem,
        clip_length_s: f64,
    ) -> Result<PromptPlan, PromptError> {
        let b = self.with_captions(block, qa, clip_length_s)?;
        let round1 = self.templates.render(template, &b)?;
        let reask = self.templates.render("reask", &BTreeMap::new())?;
        Ok(PromptPlan {
            strategy,
            rounds: vec![
                RoundSpec::Fresh(ChatTurn::user(round1)?),
                RoundSpec::Continue(ChatTurn::user(reask)?),
            ],
        })
    }

    pub fn build_zero_shot_cot(
        &self,
        block: &CaptionBlock,
        qa: &QaItem,
        clip_length_s: f64,
    ) -> Result<PromptPlan, PromptError> {
        self.reasoning_then_reask(Strategy::ZeroShotCot, "zero_shot_cot", block, qa, clip_length_s)
    }

    pub fn build_plan_and_solve(
        &self,
        block: &CaptionBlock,
        qa: &QaItem,
        clip_length_s: f64,
    ) -> Result<PromptPlan, PromptError> {
        self.reasoning_then_reask(Strategy::PlanAndSolve, "plan_and_solve", block, qa, clip_length_s)
    }

    pub fn build_grounding(
        &self,
        block: &CaptionBlock,
        question: &str,
        index_stride: u64,
    ) -> Result<PromptPlan, PromptError> {
        if !block.numbered {
            return Err(PromptError::UnnumberedBlock);
        }
        if block.text.trim().is_empty() {
            return Err(PromptError::Empty("caption block"));
        }
        if question.trim().is_empty() {
            return Err(PromptError::Empty("question"));
        }
        let mut b = BTreeMap::new();
        b.insert("fps", self.settings.fps.clone());
        b.insert("index_stride", index_stride.to_string());
        b.insert("captions", block.text.clone());
        b.insert("question", question.to_string());
        self.single(Strategy::Grounding, self.templates.render("grounding", &b)?)
    }

    /// Dispatches on `strategy`.
    pub fn build(
        &self,
        strategy: Strategy,
        block: &CaptionBlock,
        qa: &QaItem,
        clip_length_s: f64,
        index_stride: u64,
    ) -> Result<PromptPlan, PromptError> {
        match strategy {
            Strategy::Standard => self.build_standard(block, qa, clip_length_s),
            Strategy::SummarizeThenAnswer { variant, n_words } => {
                self.build_summarize_then_answer(block, qa, clip_length_s, variant, n_words)
            }
            Strategy::ZeroShotCot => self.build_zero_shot_cot(block, qa, clip_length_s),
            Strategy::PlanAndSolve => self.build_plan_and_solve(block, qa, clip_length_s),
            Strategy::Grounding => self.build_grounding(block, &qa.question, index_stride),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn builder() -> PromptBuilder {
        PromptBuilder::new(Arc::new(TemplateSet::embedded()), PromptSettings::default())
    }

    fn block(numbered: bool) -> CaptionBlock {
        CaptionBlock {
            text: if numbered {
                "0: C opens the fridge. 2: C takes milk.".into()
            } else {
                "C opens the fridge. C takes milk.".into()
            },
            selected_count: 2,
            source_indices: vec![0, 1],
            numbered,
        }
    }

    fn qa() -> QaItem {
        QaItem {
            qa_id: "q1".into(),
            video_id: "v".into(),
            question: "What does C take?".into(),
            options: ["milk", "eggs", "bread", "juice", "water"].map(String::from),
            answer_index: Some(0),
            categories: vec![],
        }
    }

    fn user_text(plan: &PromptPlan, round: usize, outputs: &[&str]) -> String {
        let outputs: Vec<String> = outputs.iter().map(|s| s.to_string()).collect();
        plan.conversation(round, &outputs).unwrap().last().unwrap().content.clone()
    }

    #[test]
    fn standard_contains_each_option_once() {
        let plan = builder().build_standard(&block(false), &qa(), 1.0).unwrap();
        assert_eq!(plan.rounds.len(), 1);
        let text = user_text(&plan, 0, &[]);
        for (letter, opt) in ['A', 'B', 'C', 'D', 'E'].iter().zip(&qa().options) {
            assert_eq!(text.matches(&format!("{letter}: {opt}.")).count(), 1);
        }
        assert_eq!(text.matches("What does C take?").count(), 1);
        assert!(text.ends_with("the first character should be your answer to this multiple choice question."));
        assert!(text.contains("Each sentence describes a 1 second clip."));
        assert!(!text.contains("${"));
    }

    #[test]
    fn summarize_variants() {
        let b = builder();
        let cq = b
            .build_summarize_then_answer(&block(false), &qa(), 1.0, SummaryVariant::CQ, 500)
            .unwrap();
        let r1 = user_text(&cq, 0, &[]);
        assert!(r1.contains("500 word summary"));
        assert!(r1.contains("What does C take?"));
        assert!(!r1.contains("A: milk"));

        let c = b
            .build_summarize_then_answer(&block(false), &qa(), 1.0, SummaryVariant::C, 500)
            .unwrap();
        assert!(!user_text(&c, 0, &[]).contains("What does C take?"));

        let cqa = b
            .build_summarize_then_answer(&block(false), &qa(), 1.0, SummaryVariant::CQA, 500)
            .unwrap();
        let r1 = user_text(&cqa, 0, &[]);
        for opt in &qa().options {
            assert_eq!(r1.matches(&format!(": {opt}.")).count(), 1, "{opt}");
        }
    }

    #[test]
    fn summary_round_replaces_captions() {
        let plan = builder()
            .build_summarize_then_answer(&block(false), &qa(), 1.0, SummaryVariant::CQ, 50)
            .unwrap();
        let r2 = user_text(&plan, 1, &["SUMMARY."]);
        assert!(r2.contains("Here are the descriptions: SUMMARY.\n"));
        assert!(!r2.contains("C opens the fridge"));
        assert_eq!(r2.matches("What does C take?").count(), 1);
        assert_eq!(plan.conversation(1, &[]).unwrap_err(), PromptError::MissingOutput { round: 1, needs: 0, have: 0 });
        assert_eq!(plan.conversation(1, &["  ".into()]).unwrap_err(), PromptError::EmptyOutput(0));
    }

    #[test]
    fn zero_words_rejected() {
        let err = builder()
            .build_summarize_then_answer(&block(false), &qa(), 1.0, SummaryVariant::C, 0)
            .unwrap_err();
        assert_eq!(err, PromptError::ZeroWords);
    }

    #[test]
    fn cot_round_two_embeds_rationale() {
        let plan = builder().build_zero_shot_cot(&block(false), &qa(), 1.0).unwrap();
        assert!(user_text(&plan, 0, &[]).ends_with("Before answering the question, let's think step by step."));
        let turns = plan.conversation(1, &["Milk is taken. A".into()]).unwrap();
        assert_eq!(turns.len(), 3);
        assert_eq!(turns[1], ChatTurn::assistant("Milk is taken. A").unwrap());
        assert!(turns[2].content.ends_with("Your response should only contain one letter."));
    }

    #[test]
    fn reask_is_shared_and_constant() {
        let b = builder();
        let mut other = qa();
        other.question = "Where is C?".into();
        let cot = b.build_zero_shot_cot(&block(false), &qa(), 1.0).unwrap();
        let cot2 = b.build_zero_shot_cot(&block(false), &other, 2.0).unwrap();
        let ps = b.build_plan_and_solve(&block(false), &qa(), 1.0).unwrap();
        assert_eq!(cot.rounds[1], cot2.rounds[1]);
        assert_eq!(cot.rounds[1], ps.rounds[1]);
        assert!(user_text(&ps, 0, &[]).contains("decompose it into 3 sub-questions"));
    }

    #[test]
    fn grounding_requires_numbering() {
        let b = builder();
        assert_eq!(
            b.build_grounding(&block(false), "why?", 2).unwrap_err(),
            PromptError::UnnumberedBlock
        );
        let plan = b.build_grounding(&block(true), "why?", 2).unwrap();
        let text = user_text(&plan, 0, &[]);
        assert!(text.contains("[frame_start_index, frame_end_index]"));
        assert!(text.contains("every 2 frames"));
        assert!(!text.contains("A: milk"));
    }

    #[test]
    fn clip_length_forms() {
        assert_eq!(clip_length_phrase(1.0), "1 second");
        assert_eq!(clip_length_phrase(8.0), "8 seconds");
        assert_eq!(clip_length_phrase(0.5), "0.5 seconds");
    }

    #[test]
    fn round_counts_match_strategy() {
        let b = builder();
        for s in [
            Strategy::Standard,
            Strategy::SummarizeThenAnswer { variant: SummaryVariant::CQA, n_words: 5 },
            Strategy::ZeroShotCot,
            Strategy::PlanAndSolve,
            Strategy::Grounding,
        ] {
            let plan = b.build(s, &block(true), &qa(), 1.0, 2).unwrap();
            assert_eq!(plan.rounds.len(), s.rounds(), "{s}");
        }
    }

    #[test]
    fn strategy_config_shape() {
        let s: Strategy = toml::from_str("kind = \"summarize_then_answer\"\nvariant = \"CQ\"\nn_words = 500").unwrap();
        assert_eq!(s, Strategy::SummarizeThenAnswer { variant: SummaryVariant::CQ, n_words: 500 });
    }
}
