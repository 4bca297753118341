//! Experiment orchestration: binds corpus, sampler, strategy and backend
//! into a resumable run and writes the per-item results, summary and manifest.
//!
//! Output files in `output_dir`:
//!
//! * `results.jsonl`: one [`ItemResult`] per QA item, in `qa_id` order.
//! * `summary.json`: the [`RunSummary`]; a pure function of the experiment
//!   digest and the cache contents.
//! * `manifest.json`: the [`RunManifest`] with wall-clock, throughput,
//!   worker count and failures.

mod config;
mod synth;

pub use config::{BackendConfig, CorpusPaths, ExperimentConfig};
pub use synth::{synthesize, SynthSpec, SynthCorpus};

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{
    execute_plan, BackendError, ChatBackend, Executor, MockBackend, OpenAiBackend, RecordCache, Rulebook,
};
use crate::clock::{Clock, SimClock};
use crate::corpus::{self, CaptionTrack, GroundingLabel, QaItem};
use crate::metrics::{self, AggregateOptions, EvalReport, ItemResult, Throughput};
use crate::parse::{parse_choice, parse_intervals};
use crate::prompt::{PromptBuilder, PromptPlan, Strategy, TemplateSet};
use crate::sampler::{self, Numbering, SamplerConfig};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("{failed} of {total} items failed; first error: {first_error}")]
    Partial {
        failed: usize,
        total: usize,
        first_error: String,
    },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl RunError {
    /// Process exit code used by the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Transport(_) => 3,
            Self::Partial { .. } => 4,
            Self::Io { .. } => 1,
        }
    }
}

fn io_err(path: &Path, e: impl ToString) -> RunError {
    RunError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn invalid(e: impl ToString) -> RunError {
    RunError::Validation(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Interrupted,
    Partial,
}

/// Content hashes of the corpus files a run consumed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDigests {
    pub captions: String,
    pub qa: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grounding: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<String>,
}

/// Reproducible summary of a completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment_digest: String,
    pub template_version: String,
    pub template_digest: String,
    pub backend_id: String,
    pub model: String,
    pub strategy: Strategy,
    pub sampler: SamplerConfig,
    /// True when captions were merged to a clip length the captioner never produced.
    pub clip_length_approximated: bool,
    pub corpus: CorpusDigests,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub qa_id: String,
    pub error: String,
}

/// Run metadata that legitimately varies between otherwise identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub status: RunStatus,
    pub config_digest: String,
    pub experiment_digest: String,
    pub template_version: String,
    pub template_digest: String,
    pub backend_id: String,
    pub replay_only: bool,
    pub workers: usize,
    pub items_total: usize,
    pub items_completed: usize,
    pub requests: usize,
    pub cache_hits: usize,
    pub network_attempts: u64,
    /// `None` leaves the limit to the backend default.
    pub max_output_tokens: Option<u32>,
    pub started_at_unix_ms: u64,
    pub elapsed_s: f64,
    /// Language-model stage only; caption extraction is not timed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_stage_throughput: Option<Throughput>,
    pub failures: Vec<ItemFailure>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    /// Present when the run completed.
    pub summary: Option<RunSummary>,
    pub manifest: RunManifest,
    pub results: Vec<ItemResult>,
}

/// Knobs for embedding a run in tests or tools.
#[derive(Clone, Default)]
pub struct RunOptions {
    /// Clock for rate limiting and retry sleeps. Synthetic backends default
    /// to simulated time, live backends to the system clock.
    pub clock: Option<Arc<dyn Clock>>,
    /// Stop claiming items after this many (in `qa_id` order), as if killed.
    pub stop_after: Option<usize>,
    /// Replaces the backend built from the config.
    pub backend: Option<Arc<dyn ChatBackend>>,
}

/// One QA item ready to execute.
struct WorkItem {
    qa: QaItem,
    answer: PromptPlan,
    grounding: Option<GroundingPlan>,
    caption_count: usize,
}

struct GroundingPlan {
    plan: PromptPlan,
    seconds_per_index: f64,
}

/// Everything a run needs, checked before any backend call.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub templates: Arc<TemplateSet>,
    pub qa_items: Vec<QaItem>,
    pub grounding: Option<BTreeMap<String, GroundingLabel>>,
    pub corpus_digests: CorpusDigests,
    pub backend_id: String,
    pub experiment_digest: String,
    pub clip_length_approximated: bool,
    rulebook: Option<Rulebook>,
    work: Vec<WorkItem>,
}

impl Prepared {
    pub fn items(&self) -> usize {
        self.work.len()
    }

    /// Caption count per item, in `qa_id` order.
    pub fn caption_counts(&self) -> Vec<(String, usize)> {
        self.work
            .iter()
            .map(|w| (w.qa.qa_id.clone(), w.caption_count))
            .collect()
    }
}

fn file_digest(path: &Path) -> Result<String, RunError> {
    let bytes = std::fs::read(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Index step written into the grounding prompt.
fn prompt_index_stride(cfg: &SamplerConfig, selected: &CaptionTrack) -> u64 {
    cfg.index_stride
        .or(selected.frame_stride.map(u64::from))
        .unwrap_or(1)
}

/// Seconds covered by one frame-index unit in the grounding block.
///
/// Stored indices use the track's own scale. Derived indices advance by
/// `index_stride` per selected caption, and each selected caption stands
/// for `clip_length * sampling_stride` seconds.
fn seconds_per_index(cfg: &SamplerConfig, track: &CaptionTrack) -> f64 {
    let stored = track.clips.iter().all(|c| c.frame_index.is_some());
    match (stored, cfg.index_stride) {
        (false, Some(stride)) => {
            cfg.effective_clip_length(track) * cfg.sampling_stride as f64 / stride as f64
        }
        _ => track.frame_index_seconds(),
    }
}

fn plan_item(
    builder: &PromptBuilder,
    cfg: &ExperimentConfig,
    track: &CaptionTrack,
    qa: &QaItem,
) -> Result<WorkItem, RunError> {
    let ctx = |e: &dyn std::fmt::Display| invalid(format!("item {}: {e}", qa.qa_id));
    let clip_len = cfg.sampler.effective_clip_length(track);
    if !cfg.strategy.is_grounding() {
        let block = sampler::render_block(track, &cfg.sampler).map_err(|e| ctx(&e))?;
        let stride = cfg.sampler.index_stride.unwrap_or(1);
        let answer = builder
            .build(cfg.strategy, &block, qa, clip_len, stride)
            .map_err(|e| ctx(&e))?;
        return Ok(WorkItem {
            qa: qa.clone(),
            answer,
            grounding: None,
            caption_count: block.selected_count,
        });
    }
    let qa_cfg = SamplerConfig {
        numbering: Numbering::Off,
        ..cfg.sampler.clone()
    };
    let g_cfg = SamplerConfig {
        numbering: Numbering::FrameIndex,
        ..cfg.sampler.clone()
    };
    let block = sampler::render_block(track, &qa_cfg).map_err(|e| ctx(&e))?;
    let answer = builder
        .build_standard(&block, qa, clip_len)
        .map_err(|e| ctx(&e))?;
    let g_block = sampler::render_block(track, &g_cfg).map_err(|e| ctx(&e))?;
    let selected = sampler::select(track, &g_cfg).map_err(|e| ctx(&e))?;
    let plan = builder
        .build_grounding(&g_block, &qa.question, prompt_index_stride(&g_cfg, &selected))
        .map_err(|e| ctx(&e))?;
    Ok(WorkItem {
        qa: qa.clone(),
        answer,
        grounding: Some(GroundingPlan {
            plan,
            seconds_per_index: seconds_per_index(&g_cfg, track),
        }),
        caption_count: block.selected_count,
    })
}

#[derive(Serialize)]
struct ExperimentIdentity<'a> {
    corpus: &'a CorpusDigests,
    sampler: &'a SamplerConfig,
    strategy: &'a Strategy,
    prompt: &'a crate::prompt::PromptSettings,
    model: &'a crate::backend::RequestParams,
    template_digest: &'a str,
    backend_id: &'a str,
    pricing: &'a metrics::Pricing,
    grounding_policy: &'a metrics::MultiIntervalPolicy,
}

/// Loads and checks everything; no backend call is made.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, RunError> {
    config.validate_static()?;
    let templates = Arc::new(match &config.templates_dir {
        Some(dir) => TemplateSet::load_dir(dir).map_err(invalid)?,
        None => TemplateSet::embedded(),
    });
    let tracks = corpus::load_caption_tracks(&config.corpus.captions).map_err(invalid)?;
    let mut qa_items = corpus::load_qa(&config.corpus.qa).map_err(invalid)?;
    if qa_items.is_empty() {
        return Err(invalid("the QA file has no items"));
    }
    if let Some(path) = &config.corpus.categories {
        let map = corpus::load_categories(path).map_err(invalid)?;
        corpus::attach_categories(&mut qa_items, &map);
    }
    let known: BTreeSet<String> = qa_items.iter().map(|q| q.qa_id.clone()).collect();
    let grounding = match &config.corpus.grounding {
        Some(path) => Some(corpus::load_grounding(path, Some(&known)).map_err(invalid)?),
        None => None,
    };

    let corpus_digests = CorpusDigests {
        captions: file_digest(&config.corpus.captions)?,
        qa: file_digest(&config.corpus.qa)?,
        grounding: config.corpus.grounding.as_deref().map(file_digest).transpose()?,
        categories: config.corpus.categories.as_deref().map(file_digest).transpose()?,
    };

    let (backend_id, rulebook) = match &config.backend {
        BackendConfig::Mock { rulebook } => {
            let book = Rulebook::load(rulebook).map_err(invalid)?;
            (format!("mock:{}", book.fingerprint()), Some(book))
        }
        BackendConfig::Live { base_url, backend_id, .. } => {
            if base_url.trim().is_empty() {
                return Err(invalid("backend.base_url must be set"));
            }
            let id = backend_id
                .clone()
                .unwrap_or_else(|| format!("openai:{}", base_url.trim_end_matches('/')));
            (id, None)
        }
        BackendConfig::Replay { backend_id } => (backend_id.clone(), None),
    };

    let builder = PromptBuilder::new(templates.clone(), config.prompt.clone());
    let mut work = Vec::with_capacity(qa_items.len());
    let mut approximated = false;
    for qa in &qa_items {
        let track = tracks.get(&qa.video_id).ok_or_else(|| {
            invalid(format!("item {}: no captions for video {}", qa.qa_id, qa.video_id))
        })?;
        if let Some(l) = config.sampler.target_clip_length_s {
            approximated |= (l - track.native_clip_length_s).abs() > 1e-9;
        }
        work.push(plan_item(&builder, config, track, qa)?);
    }

    let identity = ExperimentIdentity {
        corpus: &corpus_digests,
        sampler: &config.sampler,
        strategy: &config.strategy,
        prompt: &config.prompt,
        model: &config.model,
        template_digest: templates.digest(),
        backend_id: &backend_id,
        pricing: &config.pricing,
        grounding_policy: &config.grounding_policy,
    };
    let canonical = serde_json::to_value(&identity).expect("identity serializes").to_string();
    let experiment_digest = hex::encode(Sha256::digest(canonical.as_bytes()));

    Ok(Prepared {
        config: config.clone(),
        templates,
        qa_items,
        grounding,
        corpus_digests,
        backend_id,
        experiment_digest,
        clip_length_approximated: approximated,
        rulebook,
        work,
    })
}

fn build_executor(prepared: &Prepared, options: &RunOptions) -> Result<Executor, RunError> {
    let cfg = &prepared.config;
    if let BackendConfig::Replay { .. } = cfg.backend {
        let cache = RecordCache::open_read_only(&cfg.cache_path).map_err(invalid)?;
        return Ok(Executor::replay_only(prepared.backend_id.clone(), Arc::new(cache)));
    }
    let cache = Arc::new(RecordCache::open(&cfg.cache_path).map_err(invalid)?);
    let backend: Arc<dyn ChatBackend> = match (&options.backend, &cfg.backend) {
        (Some(b), _) => b.clone(),
        (None, BackendConfig::Mock { .. }) => {
            let book = prepared.rulebook.clone().expect("mock backends carry a rulebook");
            Arc::new(MockBackend::with_id(book, prepared.backend_id.clone()))
        }
        (None, BackendConfig::Live { base_url, api_key, .. }) => Arc::new(
            OpenAiBackend::new(base_url, api_key.clone(), cfg.backend.timeout())
                .with_id(prepared.backend_id.clone()),
        ),
        (None, BackendConfig::Replay { .. }) => unreachable!(),
    };
    let clock: Arc<dyn Clock> = match &options.clock {
        Some(c) => c.clone(),
        None if backend.is_synthetic() => Arc::new(SimClock::new()),
        None => Arc::new(crate::clock::SystemClock::new()),
    };
    Ok(Executor::live(backend, cache, &cfg.rate).with_clock(clock, &cfg.rate))
}

fn execute_item(
    item: &WorkItem,
    executor: &Executor,
    cfg: &ExperimentConfig,
) -> Result<ItemResult, BackendError> {
    let answer = execute_plan(&item.answer, executor, &cfg.model)?;
    let last = answer.outputs.last().map(String::as_str).unwrap_or("");
    let choice = parse_choice(last);
    let mut records = answer.records;
    let mut outputs = answer.outputs;
    let mut predicted_intervals = None;
    if let Some(g) = &item.grounding {
        let out = execute_plan(&g.plan, executor, &cfg.model)?;
        if let Some(pred) = out.outputs.last().and_then(|t| parse_intervals(t)) {
            let secs = metrics::frames_to_seconds(&pred, g.seconds_per_index)
                .map_err(|e| BackendError::Schema(e.to_string()))?;
            predicted_intervals = Some(secs);
        }
        records.extend(out.records);
        outputs.extend(out.outputs);
    }
    Ok(ItemResult {
        qa_id: item.qa.qa_id.clone(),
        video_id: item.qa.video_id.clone(),
        choice,
        predicted_intervals,
        rounds: records.iter().map(|r| r.request_digest.clone()).collect(),
        outputs,
        caption_count: item.caption_count,
        prompt_tokens: records.iter().map(|r| r.prompt_tokens).sum(),
        completion_tokens: records.iter().map(|r| r.completion_tokens).sum(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    corpus::write_atomically(path, text.as_bytes()).map_err(|e| io_err(path, e))
}

fn write_results(path: &Path, results: &[ItemResult]) -> Result<(), RunError> {
    let mut text = String::new();
    for r in results {
        text.push_str(&serde_json::to_string(r).expect("result serializes"));
        text.push('\n');
    }
    corpus::write_atomically(path, text.as_bytes()).map_err(|e| io_err(path, e))
}

pub fn run(config: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    run_with(config, &RunOptions::default())
}

pub fn run_with(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome, RunError> {
    let prepared = prepare(config)?;
    run_prepared(&prepared, options)
}

/// Executes a prepared run on a pool of `workers` threads.
pub fn run_prepared(prepared: &Prepared, options: &RunOptions) -> Result<RunOutcome, RunError> {
    let cfg = &prepared.config;
    let executor = build_executor(prepared, options)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| io_err(&cfg.output_dir, e))?;
    for stale in [RESULTS_FILE, SUMMARY_FILE] {
        let p = cfg.output_dir.join(stale);
        if p.exists() {
            std::fs::remove_file(&p).map_err(|e| io_err(&p, e))?;
        }
    }

    let started_at_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    let start = Instant::now();
    let limit = options.stop_after.unwrap_or(usize::MAX).min(prepared.work.len());
    let next = AtomicUsize::new(0);
    let sink: Mutex<Vec<Result<ItemResult, (String, BackendError)>>> = Mutex::new(Vec::new());
    tracing::info!(
        items = prepared.work.len(),
        workers = cfg.workers,
        backend = %prepared.backend_id,
        "starting run"
    );
    std::thread::scope(|scope| {
        for _ in 0..cfg.workers.min(limit.max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= limit {
                    break;
                }
                let item = &prepared.work[i];
                let outcome = execute_item(item, &executor, cfg).map_err(|e| (item.qa.qa_id.clone(), e));
                if let Err((id, e)) = &outcome {
                    tracing::warn!(qa_id = %id, error = %e, "item failed");
                }
                sink.lock().unwrap().push(outcome);
            });
        }
    });
    let elapsed_s = start.elapsed().as_secs_f64();

    let mut results = Vec::new();
    let mut failed: Vec<(String, BackendError)> = Vec::new();
    for o in sink.into_inner().unwrap() {
        match o {
            Ok(r) => results.push(r),
            Err(f) => failed.push(f),
        }
    }
    results.sort_by(|a, b| a.qa_id.cmp(&b.qa_id));
    failed.sort_by(|a, b| a.0.cmp(&b.0));

    let status = if !failed.is_empty() {
        RunStatus::Partial
    } else if limit < prepared.work.len() {
        RunStatus::Interrupted
    } else {
        RunStatus::Complete
    };
    let log = executor.log();
    let videos: BTreeSet<&str> = results.iter().map(|r| r.video_id.as_str()).collect();
    let manifest = RunManifest {
        status,
        config_digest: cfg.digest(),
        experiment_digest: prepared.experiment_digest.clone(),
        template_version: prepared.templates.version().to_string(),
        template_digest: prepared.templates.digest().to_string(),
        backend_id: prepared.backend_id.clone(),
        replay_only: executor.is_replay_only(),
        workers: cfg.workers,
        items_total: prepared.work.len(),
        items_completed: results.len(),
        requests: log.len(),
        cache_hits: log.iter().filter(|e| e.cached).count(),
        network_attempts: executor.network_attempts(),
        max_output_tokens: cfg.model.max_output_tokens,
        started_at_unix_ms,
        elapsed_s,
        llm_stage_throughput: (!results.is_empty())
            .then(|| metrics::throughput(videos.len(), elapsed_s.max(1e-9), cfg.video_duration_s).ok())
            .flatten(),
        failures: failed
            .iter()
            .map(|(id, e)| ItemFailure {
                qa_id: id.clone(),
                error: e.to_string(),
            })
            .collect(),
    };
    write_json(&cfg.output_dir.join(MANIFEST_FILE), &manifest)?;

    if status == RunStatus::Partial {
        let first_error = failed[0].1.to_string();
        if results.is_empty() && failed.iter().all(|(_, e)| e.is_transport()) {
            return Err(RunError::Transport(first_error));
        }
        return Err(RunError::Partial {
            failed: failed.len(),
            total: prepared.work.len(),
            first_error,
        });
    }
    if status == RunStatus::Interrupted {
        return Ok(RunOutcome {
            status,
            summary: None,
            manifest,
            results,
        });
    }

    write_results(&cfg.output_dir.join(RESULTS_FILE), &results)?;
    let summary = summarize(prepared, &results)?;
    write_json(&cfg.output_dir.join(SUMMARY_FILE), &summary)?;
    tracing::info!(
        accuracy = summary.report.accuracy,
        items = results.len(),
        elapsed_s,
        "run complete"
    );
    Ok(RunOutcome {
        status,
        summary: Some(summary),
        manifest,
        results,
    })
}

fn summarize(prepared: &Prepared, results: &[ItemResult]) -> Result<RunSummary, RunError> {
    let cfg = &prepared.config;
    let report = metrics::aggregate(
        results,
        &prepared.qa_items,
        prepared.grounding.as_ref(),
        &AggregateOptions {
            policy: cfg.grounding_policy,
            pricing: cfg.pricing,
        },
    )
    .map_err(invalid)?;
    Ok(RunSummary {
        experiment_digest: prepared.experiment_digest.clone(),
        template_version: prepared.templates.version().to_string(),
        template_digest: prepared.templates.digest().to_string(),
        backend_id: prepared.backend_id.clone(),
        model: cfg.model.model.clone(),
        strategy: cfg.strategy,
        sampler: cfg.sampler.clone(),
        clip_length_approximated: prepared.clip_length_approximated,
        corpus: prepared.corpus_digests.clone(),
        report,
    })
}

pub fn read_results(path: &Path) -> Result<Vec<ItemResult>, RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| io_err(path, format!("line {}: {e}", n + 1)))
        })
        .collect()
}

/// Re-aggregates a finished run from its per-item results file.
pub fn report(config: &ExperimentConfig, results_path: &Path) -> Result<RunSummary, RunError> {
    let prepared = prepare(config)?;
    let results = read_results(results_path)?;
    summarize(&prepared, &results)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    ClipLength,
    Stride,
}

impl SweepAxis {
    fn apply(self, sampler: &mut SamplerConfig, value: f64) -> Result<(), RunError> {
        match self {
            Self::ClipLength => sampler.target_clip_length_s = Some(value),
            Self::Stride => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(invalid(format!("stride {value} is not a positive integer")));
                }
                sampler.sampling_stride = value as usize;
            }
        }
        Ok(())
    }

    fn label(self) -> &'static str {
        match self {
            Self::ClipLength => "clip_length",
            Self::Stride => "stride",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<EvalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs one experiment per axis value into `<output_dir>/<axis>_<value>`,
/// sharing the cache. A failing point is recorded and the sweep continues.
pub fn sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    options: &RunOptions,
) -> Result<Vec<SweepPoint>, RunError> {
    if values.is_empty() {
        return Err(invalid("sweep needs at least one axis value"));
    }
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let mut point_cfg = config.clone();
        let dir = config.output_dir.join(format!("{}_{value}", axis.label()));
        point_cfg.output_dir = dir.clone();
        let outcome = axis
            .apply(&mut point_cfg.sampler, value)
            .and_then(|_| run_with(&point_cfg, options));
        let point = match outcome {
            Ok(RunOutcome { summary: Some(s), .. }) => SweepPoint {
                value,
                output_dir: dir,
                report: Some(s.report),
                error: None,
            },
            Ok(o) => SweepPoint {
                value,
                output_dir: dir,
                report: None,
                error: Some(format!("run ended with status {:?}", o.status)),
            },
            Err(e) => {
                tracing::warn!(value, error = %e, "sweep point failed");
                SweepPoint {
                    value,
                    output_dir: dir,
                    report: None,
                    error: Some(e.to_string()),
                }
            }
        };
        points.push(point);
    }
    std::fs::create_dir_all(&config.output_dir).map_err(|e| io_err(&config.output_dir, e))?;
    write_json(&config.output_dir.join("sweep.json"), &points)?;
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::tests::track;

    #[test]
    fn derived_index_scale_follows_clip_and_stride() {
        let t = track(20, 1.0);
        let cfg = SamplerConfig {
            target_clip_length_s: Some(2.0),
            sampling_stride: 2,
            numbering: Numbering::FrameIndex,
            index_stride: Some(4),
        };
        assert_eq!(seconds_per_index(&cfg, &t), 1.0);
        let cfg = SamplerConfig {
            index_stride: Some(1),
            ..cfg
        };
        assert_eq!(seconds_per_index(&cfg, &t), 4.0);
    }

    #[test]
    fn stored_indices_use_track_scale() {
        let mut t = track(10, 2.0);
        for (i, c) in t.clips.iter_mut().enumerate() {
            c.frame_index = Some(i as u64 * 30);
        }
        t.seconds_per_frame_index = Some(1.0 / 30.0);
        let cfg = SamplerConfig {
            index_stride: Some(7),
            ..SamplerConfig::default()
        };
        assert!((seconds_per_index(&cfg, &t) - 1.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            RunError::Validation(String::new()).exit_code(),
            RunError::Transport(String::new()).exit_code(),
            RunError::Partial {
                failed: 1,
                total: 2,
                first_error: String::new(),
            }
            .exit_code(),
        ];
        assert_eq!(codes, [2, 3, 4]);
    }

    #[test]
    fn stride_axis_rejects_fractions() {
        let mut s = SamplerConfig::default();
        assert!(SweepAxis::Stride.apply(&mut s, 2.5).is_err());
        SweepAxis::Stride.apply(&mut s, 4.0).unwrap();
        assert_eq!(s.sampling_stride, 4);
    }
}
