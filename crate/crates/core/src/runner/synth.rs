//! Seeded synthetic corpora and matching mock rulebooks.
//!
//! Used for dry runs and the determinism tests; the seed only affects what
//! is generated here.

use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backend::Rulebook;
use crate::corpus::{
    self, CaptionTrack, ClipCaption, QaItem, TrackMeta, CATEGORIES_FORMAT, FORMAT_VERSION,
    GROUNDING_FORMAT, NUM_OPTIONS, OPTION_LETTERS,
};

use super::RunError;

pub const CATEGORIES: [&str; 5] = [
    "Purpose/Goal Identification",
    "Tools and Materials Usage",
    "Key Action/Moment Detection",
    "Action Sequence Analysis",
    "Character Interaction",
];

const VERBS: [&str; 10] = [
    "picks up", "puts down", "opens", "closes", "washes", "cuts", "holds", "moves", "looks at", "turns",
];
const OBJECTS: [&str; 12] = [
    "the cup", "the knife", "a drawer", "the tap", "a bowl", "the board", "a towel", "the pan",
    "a bottle", "the lid", "a spoon", "the door",
];

pub const SUMMARY_REPLY: &str = "C spends the video preparing food at a kitchen counter.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub videos: usize,
    pub questions_per_video: usize,
    pub clips_per_video: usize,
    pub native_clip_length_s: f64,
    /// Store a frame index on every clip (one index per native clip).
    pub frame_indices: bool,
    /// Also write grounding labels and grounding replies.
    pub grounding: bool,
    /// Probability that the scripted reply is the correct letter.
    pub accuracy: f64,
    /// Probability that the scripted reply carries no letter at all.
    pub malformed: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            videos: 10,
            questions_per_video: 1,
            clips_per_video: 180,
            native_clip_length_s: 1.0,
            frame_indices: false,
            grounding: false,
            accuracy: 0.6,
            malformed: 0.0,
            seed: 0,
        }
    }
}

/// Paths written by [`synthesize`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub captions: PathBuf,
    pub qa: PathBuf,
    pub categories: PathBuf,
    pub grounding: Option<PathBuf>,
    pub rulebook: PathBuf,
    pub items: Vec<QaItem>,
}

fn caption(rng: &mut StdRng) -> String {
    let v = VERBS[rng.random_range(0..VERBS.len())];
    let o = OBJECTS[rng.random_range(0..OBJECTS.len())];
    format!("C {v} {o}")
}

fn reply_for(rng: &mut StdRng, item: &QaItem, spec: &SynthSpec) -> String {
    if rng.random_bool(spec.malformed.clamp(0.0, 1.0)) {
        return "I cannot tell from these descriptions.".into();
    }
    let key = item.answer_index.expect("synthetic items have keys");
    let idx = if rng.random_bool(spec.accuracy.clamp(0.0, 1.0)) {
        key
    } else {
        (key + rng.random_range(1..NUM_OPTIONS)) % NUM_OPTIONS
    };
    let letter = OPTION_LETTERS[idx];
    match rng.random_range(0..3) {
        0 => letter.to_string(),
        1 => format!("{letter}: {}", item.options[idx]),
        _ => format!("{letter}. Based on the descriptions."),
    }
}

fn write_lines(path: &Path, header: serde_json::Value, rows: &[serde_json::Value]) -> Result<(), RunError> {
    let mut text = header.to_string();
    text.push('\n');
    for r in rows {
        text.push_str(&r.to_string());
        text.push('\n');
    }
    corpus::write_atomically(path, text.as_bytes()).map_err(|e| super::io_err(path, e))
}

/// Writes a synthetic corpus and rulebook into `dir`.
pub fn synthesize(dir: &Path, spec: &SynthSpec) -> Result<SynthCorpus, RunError> {
    if spec.videos == 0 || spec.questions_per_video == 0 || spec.clips_per_video == 0 {
        return Err(super::invalid("synthetic corpus sizes must be positive"));
    }
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let meta = TrackMeta {
        native_clip_length_s: spec.native_clip_length_s,
        frame_stride: spec.frame_indices.then_some(1),
        seconds_per_frame_index: None,
    };
    let mut tracks = Vec::new();
    let mut items = Vec::new();
    let mut category_rows = Vec::new();
    let mut grounding_rows = Vec::new();
    let mut rules: Vec<(String, String)> = vec![("word summary".into(), SUMMARY_REPLY.into())];
    let mut answer_rules = Vec::new();

    for v in 0..spec.videos {
        let video_id = format!("vid{v:04}");
        let clips = (0..spec.clips_per_video)
            .map(|i| ClipCaption {
                video_id: video_id.clone(),
                start_s: i as f64 * spec.native_clip_length_s,
                end_s: (i + 1) as f64 * spec.native_clip_length_s,
                text: caption(&mut rng),
                frame_index: spec.frame_indices.then_some(i as u64),
                source_index: 0,
            })
            .collect();
        tracks.push(CaptionTrack::new(video_id.clone(), clips, &meta).map_err(super::invalid)?);

        for q in 0..spec.questions_per_video {
            let qa_id = format!("q{v:04}_{q:02}");
            let question = format!("What is C mainly doing in clip set {qa_id}?");
            let options: [String; NUM_OPTIONS] = std::array::from_fn(|_| {
                format!("C {} {}", VERBS[rng.random_range(0..VERBS.len())], OBJECTS[rng.random_range(0..OBJECTS.len())])
            });
            let n_cats = rng.random_range(1..=2);
            let mut cats: Vec<String> = Vec::new();
            while cats.len() < n_cats {
                let c = CATEGORIES[rng.random_range(0..CATEGORIES.len())].to_string();
                if !cats.contains(&c) {
                    cats.push(c);
                }
            }
            category_rows.push(json!({"qa_id": qa_id, "categories": cats}));
            let item = QaItem {
                qa_id: qa_id.clone(),
                video_id: video_id.clone(),
                question: question.clone(),
                options,
                answer_index: Some(rng.random_range(0..NUM_OPTIONS)),
                categories: Vec::new(),
            };
            let reply = reply_for(&mut rng, &item, spec);
            answer_rules.push((format!("Here is the question: {question}\nHere are the choices"), reply));

            if spec.grounding {
                let n = spec.clips_per_video as u64;
                let start = rng.random_range(0..n);
                let len = rng.random_range(1..=(n - start).min(30));
                let gt_start = start as f64 * spec.native_clip_length_s;
                let gt_end = (start + len) as f64 * spec.native_clip_length_s;
                grounding_rows.push(json!({"qa_id": qa_id, "segments": [[gt_start, gt_end]]}));
                let shift = rng.random_range(0..=4u64);
                let a = start.saturating_sub(shift);
                let b = (start + len - 1 + rng.random_range(0..=4u64)).min(n - 1);
                rules.push((
                    format!("Here is the question: {question}\nPlease follow the output"),
                    format!("[{a}, {b}]"),
                ));
            }
            items.push(item);
        }
    }
    rules.extend(answer_rules);

    std::fs::create_dir_all(dir).map_err(|e| super::io_err(dir, e))?;
    let captions = dir.join("captions.jsonl");
    corpus::write_caption_tracks(&captions, &tracks).map_err(super::invalid)?;
    let qa = dir.join("qa.jsonl");
    corpus::write_qa(&qa, &items).map_err(super::invalid)?;
    let categories = dir.join("categories.jsonl");
    write_lines(
        &categories,
        json!({"format": CATEGORIES_FORMAT, "version": FORMAT_VERSION, "vocabulary": CATEGORIES}),
        &category_rows,
    )?;
    let grounding = if spec.grounding {
        let p = dir.join("grounding.jsonl");
        write_lines(&p, json!({"format": GROUNDING_FORMAT, "version": FORMAT_VERSION}), &grounding_rows)?;
        Some(p)
    } else {
        None
    };
    let book = Rulebook::new(
        rules.iter().map(|(p, r)| (p.as_str(), r.as_str())).collect(),
        "A",
    );
    let rulebook = dir.join("rulebook.json");
    let text = serde_json::to_string_pretty(&book).expect("rulebook serializes");
    corpus::write_atomically(&rulebook, text.as_bytes()).map_err(|e| super::io_err(&rulebook, e))?;
    Ok(SynthCorpus {
        captions,
        qa,
        categories,
        grounding,
        rulebook,
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            grounding: true,
            frame_indices: true,
            ..SynthSpec::default()
        };
        synthesize(a.path(), &spec).unwrap();
        synthesize(b.path(), &spec).unwrap();
        for f in ["captions.jsonl", "qa.jsonl", "categories.jsonl", "grounding.jsonl", "rulebook.json"] {
            assert_eq!(
                std::fs::read(a.path().join(f)).unwrap(),
                std::fs::read(b.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let c = tempfile::tempdir().unwrap();
        synthesize(c.path(), &SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(
            std::fs::read(a.path().join("qa.jsonl")).unwrap(),
            std::fs::read(c.path().join("qa.jsonl")).unwrap()
        );
    }

    #[test]
    fn written_corpus_loads() {
        let dir = tempfile::tempdir().unwrap();
        let out = synthesize(dir.path(), &SynthSpec { grounding: true, ..SynthSpec::default() }).unwrap();
        let tracks = corpus::load_caption_tracks(&out.captions).unwrap();
        assert_eq!(tracks.len(), 10);
        assert!(tracks.values().all(|t| t.len() == 180));
        assert_eq!(corpus::load_qa(&out.qa).unwrap(), out.items);
        let g = corpus::load_grounding(out.grounding.as_ref().unwrap(), None).unwrap();
        assert_eq!(g.len(), 10);
        corpus::load_categories(&out.categories).unwrap();
        Rulebook::load(&out.rulebook).unwrap();
    }
}
