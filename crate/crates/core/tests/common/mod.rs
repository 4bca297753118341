#![allow(dead_code)]

use std::path::{Path, PathBuf};

use capqa::runner::{synthesize, BackendConfig, CorpusPaths, SynthCorpus, SynthSpec};
use capqa::{ExperimentConfig, RatePolicy, Strategy};
use capqa::backend::RequestParams;

/// Synthetic corpus plus a mock-backend config writing under `dir/out`.
pub fn mock_experiment(dir: &Path, spec: &SynthSpec, strategy: Strategy) -> (ExperimentConfig, SynthCorpus) {
    let corpus = synthesize(&dir.join("corpus"), spec).unwrap();
    let cfg = ExperimentConfig {
        corpus: CorpusPaths {
            captions: corpus.captions.clone(),
            qa: corpus.qa.clone(),
            grounding: if strategy.is_grounding() { corpus.grounding.clone() } else { None },
            categories: Some(corpus.categories.clone()),
        },
        sampler: Default::default(),
        strategy,
        prompt: Default::default(),
        templates_dir: None,
        model: RequestParams {
            model: "gpt-3.5-turbo-1106".into(),
            temperature: 0.0,
            summary_temperature: None,
            max_output_tokens: None,
        },
        backend: BackendConfig::Mock {
            rulebook: corpus.rulebook.clone(),
        },
        rate: RatePolicy {
            requests_per_minute: 100_000,
            tokens_per_minute: 100_000_000,
            max_in_flight: 16,
            retry: Default::default(),
        },
        pricing: Default::default(),
        grounding_policy: Default::default(),
        workers: 1,
        cache_path: dir.join("cache.jsonl"),
        output_dir: dir.join("out"),
        video_duration_s: 180.0,
        seed: spec.seed,
    };
    (cfg, corpus)
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

pub fn out(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

pub const GOLDEN_SUMMARY: &str = "C prepares food on a cutting board.";
pub const GOLDEN_COT_REPLY: &str = "C handles a knife and an onion, so C is cooking. The answer is A.";
pub const GOLDEN_PNS_REPLY: &str =
    "Sub-question 1: What does C hold? A knife. Sub-question 2: What is cut? An onion. Sub-question 3: Why? To cook.";

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn golden_track() -> capqa::CaptionTrack {
    use capqa::corpus::TrackMeta;
    let texts = ["C picks up a knife", "C cuts the onion.", "C washes the board"];
    let clips = texts
        .iter()
        .enumerate()
        .map(|(i, t)| capqa::ClipCaption {
            video_id: "kitchen".into(),
            start_s: i as f64,
            end_s: i as f64 + 1.0,
            text: t.to_string(),
            frame_index: None,
            source_index: 0,
        })
        .collect();
    let meta = TrackMeta {
        native_clip_length_s: 1.0,
        frame_stride: None,
        seconds_per_frame_index: None,
    };
    capqa::CaptionTrack::new("kitchen", clips, &meta).unwrap()
}

fn golden_item() -> capqa::QaItem {
    capqa::QaItem {
        qa_id: "g1".into(),
        video_id: "kitchen".into(),
        question: "What is the overall goal of C in the video?".into(),
        options: ["cook a meal", "clean the kitchen", "repair a drawer", "paint a wall", "read a book"]
            .map(String::from),
        answer_index: Some(0),
        categories: vec![],
    }
}

/// Renders a conversation as `### role` blocks.
pub fn render_conversation(turns: &[capqa::ChatTurn]) -> String {
    let mut out = String::new();
    for t in turns {
        let role = match t.role {
            capqa::prompt::Role::User => "user",
            capqa::prompt::Role::Assistant => "assistant",
        };
        out.push_str(&format!("### {role}\n{}\n", t.content));
    }
    out
}

/// `(golden file name, rendered text)` for every strategy round.
pub fn golden_renderings() -> Vec<(&'static str, String)> {
    use capqa::prompt::{PromptBuilder, PromptSettings, SummaryVariant, TemplateSet};
    use capqa::sampler::{render_block, Numbering};
    use std::sync::Arc;

    let track = golden_track();
    let qa = golden_item();
    let builder = PromptBuilder::new(Arc::new(TemplateSet::embedded()), PromptSettings::default());
    let block = render_block(&track, &capqa::SamplerConfig::default()).unwrap();
    let numbered = render_block(
        &track,
        &capqa::SamplerConfig {
            numbering: Numbering::FrameIndex,
            index_stride: Some(2),
            ..Default::default()
        },
    )
    .unwrap();

    let conv = |plan: &capqa::PromptPlan, round: usize, outputs: &[&str]| {
        let outputs: Vec<String> = outputs.iter().map(|s| s.to_string()).collect();
        render_conversation(&plan.conversation(round, &outputs).unwrap())
    };
    let standard = builder.build_standard(&block, &qa, 1.0).unwrap();
    let summary = builder
        .build_summarize_then_answer(&block, &qa, 1.0, SummaryVariant::CQ, 500)
        .unwrap();
    let cot = builder.build_zero_shot_cot(&block, &qa, 1.0).unwrap();
    let pns = builder.build_plan_and_solve(&block, &qa, 1.0).unwrap();
    let grounding = builder.build_grounding(&numbered, &qa.question, 2).unwrap();
    vec![
        ("standard.txt", conv(&standard, 0, &[])),
        ("summarize_round1.txt", conv(&summary, 0, &[])),
        ("summarize_round2.txt", conv(&summary, 1, &[GOLDEN_SUMMARY])),
        ("cot_round1.txt", conv(&cot, 0, &[])),
        ("cot_round2.txt", conv(&cot, 1, &[GOLDEN_COT_REPLY])),
        ("pns_round1.txt", conv(&pns, 0, &[])),
        ("pns_round2.txt", conv(&pns, 1, &[GOLDEN_PNS_REPLY])),
        ("grounding.txt", conv(&grounding, 0, &[])),
    ]
}

/// A track of `n` contiguous clips of `native` seconds with texts `c0`, `c1`, ...
pub fn plain_track(video_id: &str, n: usize, native: f64) -> capqa::CaptionTrack {
    let clips = (0..n)
        .map(|i| capqa::ClipCaption {
            video_id: video_id.into(),
            start_s: i as f64 * native,
            end_s: (i + 1) as f64 * native,
            text: format!("c{i}"),
            frame_index: None,
            source_index: 0,
        })
        .collect();
    let meta = capqa::corpus::TrackMeta {
        native_clip_length_s: native,
        frame_stride: None,
        seconds_per_frame_index: None,
    };
    capqa::CaptionTrack::new(video_id, clips, &meta).unwrap()
}
