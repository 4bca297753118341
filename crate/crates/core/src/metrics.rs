//! QA accuracy, per-category breakdown and temporal grounding metrics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{GroundingLabel, QaItem};
use crate::parse::{ChoiceOutcome, IntervalPrediction};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("interval [{0}, {1}] has non-positive length")]
    Degenerate(f64, f64),
    #[error("seconds per frame index must be positive, got {0}")]
    BadFrameScale(f64),
    #[error("result references unknown qa_id {0}")]
    UnknownQa(String),
    #[error("qa_id {0} has more than one result")]
    DuplicateResult(String),
    #[error("elapsed time must be positive")]
    ZeroElapsed,
}

/// A closed interval in seconds with positive length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondInterval {
    pub start: f64,
    pub end: f64,
}

impl SecondInterval {
    pub fn new(start: f64, end: f64) -> Result<Self, MetricsError> {
        if !(start.is_finite() && end.is_finite()) || end <= start {
            return Err(MetricsError::Degenerate(start, end));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn intersection(&self, other: &Self) -> f64 {
        (self.end.min(other.end) - self.start.max(other.start)).max(0.0)
    }
}

fn check(pred: &SecondInterval) -> Result<(), MetricsError> {
    SecondInterval::new(pred.start, pred.end).map(|_| ())
}

/// Intersection over prediction: best `|pred ∩ gt| / |pred|` over the ground truths.
pub fn iop(pred: &SecondInterval, gts: &[SecondInterval]) -> Result<f64, MetricsError> {
    check(pred)?;
    Ok(gts
        .iter()
        .map(|gt| pred.intersection(gt) / pred.len())
        .fold(0.0, f64::max))
}

/// Temporal IoU: best `|pred ∩ gt| / |pred ∪ gt|` over the ground truths.
pub fn iou(pred: &SecondInterval, gts: &[SecondInterval]) -> Result<f64, MetricsError> {
    check(pred)?;
    Ok(gts
        .iter()
        .map(|gt| {
            let inter = pred.intersection(gt);
            inter / (pred.len() + gt.len() - inter)
        })
        .fold(0.0, f64::max))
}

/// How a prediction with several intervals is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiIntervalPolicy {
    /// Best single predicted interval.
    #[default]
    Max,
    /// Union of predicted intervals against the union of ground truths.
    Union,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingScore {
    pub iop: f64,
    pub iou: f64,
    /// No prediction was available; both scores are 0.
    pub empty: bool,
}

/// Frame pair `[a, b]` covers seconds `[a·Δ, (b+1)·Δ]`.
pub fn frames_to_seconds(
    pred: &IntervalPrediction,
    seconds_per_index: f64,
) -> Result<Vec<SecondInterval>, MetricsError> {
    if !(seconds_per_index.is_finite() && seconds_per_index > 0.0) {
        return Err(MetricsError::BadFrameScale(seconds_per_index));
    }
    pred.intervals
        .iter()
        .map(|&(a, b)| {
            SecondInterval::new(a as f64 * seconds_per_index, (b + 1) as f64 * seconds_per_index)
        })
        .collect()
}

/// Sorted, disjoint cover of the input intervals.
fn union_of(intervals: &[SecondInterval]) -> Vec<SecondInterval> {
    let mut v = intervals.to_vec();
    v.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut out: Vec<SecondInterval> = Vec::new();
    for iv in v {
        match out.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => out.push(iv),
        }
    }
    out
}

fn union_len(intervals: &[SecondInterval]) -> f64 {
    union_of(intervals).iter().map(SecondInterval::len).sum()
}

fn cross_intersection(a: &[SecondInterval], b: &[SecondInterval]) -> f64 {
    let (a, b) = (union_of(a), union_of(b));
    a.iter()
        .flat_map(|x| b.iter().map(move |y| x.intersection(y)))
        .sum()
}

/// Scores already-converted second intervals against the ground truth.
pub fn score_intervals(
    preds: &[SecondInterval],
    gts: &[SecondInterval],
    policy: MultiIntervalPolicy,
) -> Result<GroundingScore, MetricsError> {
    if preds.is_empty() {
        return Ok(GroundingScore { iop: 0.0, iou: 0.0, empty: true });
    }
    for p in preds {
        check(p)?;
    }
    let (iop_v, iou_v) = match policy {
        MultiIntervalPolicy::Max => {
            let mut best = (0.0f64, 0.0f64);
            for p in preds {
                best.0 = best.0.max(iop(p, gts)?);
                best.1 = best.1.max(iou(p, gts)?);
            }
            best
        }
        MultiIntervalPolicy::Union => {
            let inter = cross_intersection(preds, gts);
            let p_len = union_len(preds);
            let mut both = preds.to_vec();
            both.extend_from_slice(gts);
            (inter / p_len, inter / union_len(&both))
        }
    };
    Ok(GroundingScore { iop: iop_v, iou: iou_v, empty: false })
}

/// Scores a frame-index prediction; `None` counts as an empty prediction.
pub fn score_grounding(
    pred: Option<&IntervalPrediction>,
    gts: &[SecondInterval],
    seconds_per_index: f64,
    policy: MultiIntervalPolicy,
) -> Result<GroundingScore, MetricsError> {
    match pred {
        None => Ok(GroundingScore { iop: 0.0, iou: 0.0, empty: true }),
        Some(p) => score_intervals(&frames_to_seconds(p, seconds_per_index)?, gts, policy),
    }
}

pub fn label_intervals(label: &GroundingLabel) -> Result<Vec<SecondInterval>, MetricsError> {
    label
        .segments
        .iter()
        .map(|[s, e]| SecondInterval::new(*s, *e))
        .collect()
}

/// Outcome of one QA item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub qa_id: String,
    pub video_id: String,
    pub choice: ChoiceOutcome,
    /// Grounding prediction converted to seconds; `None` when not evaluated
    /// or when the reply held no interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_intervals: Option<Vec<SecondInterval>>,
    /// Request digests of every backend exchange, in execution order.
    pub rounds: Vec<String>,
    pub outputs: Vec<String>,
    pub caption_count: usize,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pricing {
    /// Currency units per 1000 prompt tokens.
    #[serde(default)]
    pub prompt_per_1k: f64,
    #[serde(default)]
    pub completion_per_1k: f64,
}

impl Pricing {
    pub fn cost(&self, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        prompt_tokens as f64 / 1000.0 * self.prompt_per_1k
            + completion_tokens as f64 / 1000.0 * self.completion_per_1k
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AggregateOptions {
    pub policy: MultiIntervalPolicy,
    pub pricing: Pricing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStat {
    pub count: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingSummary {
    /// Items with both an answer key and a grounding label.
    pub items: usize,
    pub m_iop: f64,
    pub m_iou: f64,
    pub iop_at_05: f64,
    pub iou_at_05: f64,
    /// Correct answers with IoP >= 0.5, over all answer-keyed items.
    pub acc_gqa: f64,
    pub empty_predictions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub videos: usize,
    pub elapsed_s: f64,
    /// LLM-stage throughput in equivalent 3-minute videos per minute.
    pub videos_per_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub items_total: usize,
    pub items_with_answer: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub parse_failures: usize,
    pub parse_failure_rate: f64,
    pub per_category: BTreeMap<String, CategoryStat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<GroundingSummary>,
    pub prompt_tokens_total: u64,
    pub completion_tokens_total: u64,
    pub estimated_cost: f64,
    /// Wall-clock dependent; kept out of the reproducible summary file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<Throughput>,
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

pub const GROUNDING_THRESHOLD: f64 = 0.5;

/// Aggregates per-item results into a report.
///
/// Results are processed in `qa_id` order so the report does not depend on
/// the order they arrive in.
pub fn aggregate(
    results: &[ItemResult],
    qa_items: &[QaItem],
    grounding: Option<&BTreeMap<String, GroundingLabel>>,
    options: &AggregateOptions,
) -> Result<EvalReport, MetricsError> {
    let qa: BTreeMap<&str, &QaItem> = qa_items.iter().map(|q| (q.qa_id.as_str(), q)).collect();
    let mut sorted: Vec<&ItemResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.qa_id.cmp(&b.qa_id));
    let mut seen = BTreeSet::new();

    let mut answered = 0;
    let mut correct = 0;
    let mut failures = 0;
    let mut prompt_tokens = 0u64;
    let mut completion_tokens = 0u64;
    let mut cats: BTreeMap<String, (usize, usize)> = BTreeMap::new();

    let mut g_items = 0usize;
    let (mut sum_iop, mut sum_iou) = (0.0f64, 0.0f64);
    let (mut iop_hits, mut iou_hits, mut gqa_hits, mut empty) = (0usize, 0usize, 0usize, 0usize);

    for r in &sorted {
        let item = qa
            .get(r.qa_id.as_str())
            .ok_or_else(|| MetricsError::UnknownQa(r.qa_id.clone()))?;
        if !seen.insert(r.qa_id.as_str()) {
            return Err(MetricsError::DuplicateResult(r.qa_id.clone()));
        }
        prompt_tokens += r.prompt_tokens;
        completion_tokens += r.completion_tokens;
        if r.choice.is_failure() {
            failures += 1;
        }
        let Some(key) = item.answer_index else { continue };
        answered += 1;
        let is_correct = r.choice.index() == Some(key);
        if is_correct {
            correct += 1;
        }
        for c in &item.categories {
            let e = cats.entry(c.clone()).or_default();
            e.0 += 1;
            if is_correct {
                e.1 += 1;
            }
        }
        if let Some(label) = grounding.and_then(|g| g.get(&r.qa_id)) {
            let gts = label_intervals(label)?;
            let preds = r.predicted_intervals.as_deref().unwrap_or(&[]);
            let score = score_intervals(preds, &gts, options.policy)?;
            g_items += 1;
            sum_iop += score.iop;
            sum_iou += score.iou;
            empty += usize::from(score.empty);
            if score.iop >= GROUNDING_THRESHOLD {
                iop_hits += 1;
                if is_correct {
                    gqa_hits += 1;
                }
            }
            if score.iou >= GROUNDING_THRESHOLD {
                iou_hits += 1;
            }
        }
    }

    let grounding_summary = grounding.map(|_| GroundingSummary {
        items: g_items,
        m_iop: if g_items == 0 { 0.0 } else { sum_iop / g_items as f64 },
        m_iou: if g_items == 0 { 0.0 } else { sum_iou / g_items as f64 },
        iop_at_05: ratio(iop_hits, g_items),
        iou_at_05: ratio(iou_hits, g_items),
        acc_gqa: ratio(gqa_hits, answered),
        empty_predictions: empty,
    });

    Ok(EvalReport {
        items_total: sorted.len(),
        items_with_answer: answered,
        correct,
        accuracy: ratio(correct, answered),
        parse_failures: failures,
        parse_failure_rate: ratio(failures, sorted.len()),
        per_category: cats
            .into_iter()
            .map(|(k, (n, c))| {
                (
                    k,
                    CategoryStat {
                        count: n,
                        correct: c,
                        accuracy: ratio(c, n),
                    },
                )
            })
            .collect(),
        grounding: grounding_summary,
        prompt_tokens_total: prompt_tokens,
        completion_tokens_total: completion_tokens,
        estimated_cost: options.pricing.cost(prompt_tokens, completion_tokens),
        throughput: None,
    })
}

/// Reference duration for throughput normalization (3-minute clips).
pub const REFERENCE_VIDEO_S: f64 = 180.0;

/// Equivalent 3-minute videos processed per minute.
pub fn throughput(videos: usize, elapsed_s: f64, video_duration_s: f64) -> Result<Throughput, MetricsError> {
    if !(elapsed_s.is_finite() && elapsed_s > 0.0) {
        return Err(MetricsError::ZeroElapsed);
    }
    let equivalent = videos as f64 * video_duration_s / REFERENCE_VIDEO_S;
    Ok(Throughput {
        videos,
        elapsed_s,
        videos_per_min: equivalent / (elapsed_s / 60.0),
    })
}
