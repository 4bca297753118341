//! Command-line front end.
//!
//! Settings come from the experiment file; flags given on the command line
//! override the file, and the file overrides built-in defaults.
//!
//! Exit codes: 0 success, 1 I/O or usage error, 2 validation failure,
//! 3 transport failure, 4 partial run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing::Level;

use capqa::runner::{self, BackendConfig, RunError, RunOptions, SweepAxis, SynthSpec};
use capqa::ExperimentConfig;

#[derive(Parser)]
#[command(name = "capqa", version, about = "Caption-based long-video QA runs and evaluation")]
struct Cli {
    /// Log progress at debug level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute an experiment and write results, summary and manifest.
    Run {
        #[command(flatten)]
        exp: ExpArgs,
        /// Stop after this many items (the cache keeps them for a later resume).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Run one experiment per axis value.
    Sweep {
        #[command(flatten)]
        exp: ExpArgs,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated axis values, e.g. 1,2,4,8.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Re-aggregate a finished run from its per-item results file.
    Report {
        #[command(flatten)]
        exp: ExpArgs,
        /// Defaults to `<output_dir>/results.jsonl`.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Pre-flight checks only; no backend is contacted.
    Validate {
        #[command(flatten)]
        exp: ExpArgs,
    },
    /// Write a seeded synthetic corpus, mock rulebook and experiment file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        videos: usize,
        #[arg(long, default_value_t = 1)]
        questions_per_video: usize,
        #[arg(long, default_value_t = 180)]
        clips: usize,
        #[arg(long)]
        grounding: bool,
        #[arg(long)]
        frame_indices: bool,
        #[arg(long, default_value_t = 0.6)]
        accuracy: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    ClipLength,
    Stride,
}

#[derive(Args)]
struct ExpArgs {
    /// Experiment file (TOML).
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    cache_path: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_output_tokens: Option<u32>,
    /// Keep one caption every N clips.
    #[arg(long)]
    stride: Option<usize>,
    /// Merge captions to this clip length in seconds.
    #[arg(long)]
    clip_length: Option<f64>,
    #[arg(long)]
    index_stride: Option<u64>,
    /// Serve only from the cache, as recorded under this backend id.
    #[arg(long)]
    replay: Option<String>,
}

impl ExpArgs {
    fn load(&self) -> Result<ExperimentConfig, RunError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        let cwd = std::env::current_dir().unwrap_or_else(|_| PathBuf::from("."));
        let abs = |p: &Path| if p.is_relative() { cwd.join(p) } else { p.to_path_buf() };
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(p) = &self.output_dir {
            cfg.output_dir = abs(p);
        }
        if let Some(p) = &self.cache_path {
            cfg.cache_path = abs(p);
        }
        if let Some(m) = &self.model {
            cfg.model.model = m.clone();
        }
        if let Some(t) = self.temperature {
            cfg.model.temperature = t;
        }
        if let Some(n) = self.max_output_tokens {
            cfg.model.max_output_tokens = Some(n);
        }
        if let Some(k) = self.stride {
            cfg.sampler.sampling_stride = k;
        }
        if let Some(l) = self.clip_length {
            cfg.sampler.target_clip_length_s = Some(l);
        }
        if let Some(s) = self.index_stride {
            cfg.sampler.index_stride = Some(s);
        }
        if let Some(id) = &self.replay {
            cfg.backend = BackendConfig::Replay { backend_id: id.clone() };
        }
        Ok(cfg)
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn synth_config(spec: &SynthSpec) -> String {
    let mut text = String::from(
        "workers = 4\ncache_path = \"cache.jsonl\"\noutput_dir = \"out\"\n\n[corpus]\ncaptions = \"captions.jsonl\"\nqa = \"qa.jsonl\"\ncategories = \"categories.jsonl\"\n",
    );
    if spec.grounding {
        text.push_str("grounding = \"grounding.jsonl\"\n\n[strategy]\nkind = \"grounding\"\n");
    } else {
        text.push_str("\n[strategy]\nkind = \"standard\"\n");
    }
    if spec.grounding && !spec.frame_indices {
        text.push_str("\n[sampler]\nindex_stride = 1\n");
    }
    text.push_str(
        "\n[model]\nmodel = \"gpt-3.5-turbo-1106\"\ntemperature = 0.0\n\n[backend]\nkind = \"mock\"\nrulebook = \"rulebook.json\"\n\n[rate]\nrequests_per_minute = 500\ntokens_per_minute = 200000\nmax_in_flight = 8\n",
    );
    text
}

fn execute(command: Command) -> Result<(), RunError> {
    match command {
        Command::Run { exp, stop_after } => {
            let cfg = exp.load()?;
            let outcome = runner::run_with(&cfg, &RunOptions { stop_after, ..Default::default() })?;
            match &outcome.summary {
                Some(s) => print_json(&s.report),
                None => eprintln!(
                    "run stopped after {} of {} items; re-run to resume",
                    outcome.manifest.items_completed, outcome.manifest.items_total
                ),
            }
            Ok(())
        }
        Command::Sweep { exp, axis, values } => {
            let cfg = exp.load()?;
            let axis = match axis {
                Axis::ClipLength => SweepAxis::ClipLength,
                Axis::Stride => SweepAxis::Stride,
            };
            let points = runner::sweep(&cfg, axis, &values, &RunOptions::default())?;
            print_json(&points);
            if points.iter().any(|p| p.error.is_some()) {
                let failed = points.iter().filter(|p| p.error.is_some()).count();
                return Err(RunError::Partial {
                    failed,
                    total: points.len(),
                    first_error: points.iter().find_map(|p| p.error.clone()).unwrap_or_default(),
                });
            }
            Ok(())
        }
        Command::Report { exp, results } => {
            let cfg = exp.load()?;
            let path = results.unwrap_or_else(|| cfg.output_dir.join(runner::RESULTS_FILE));
            print_json(&runner::report(&cfg, &path)?);
            Ok(())
        }
        Command::Validate { exp } => {
            let cfg = exp.load()?;
            let prepared = runner::prepare(&cfg)?;
            print_json(&serde_json::json!({
                "items": prepared.items(),
                "backend_id": prepared.backend_id,
                "experiment_digest": prepared.experiment_digest,
                "config_digest": cfg.digest(),
                "template_version": prepared.templates.version(),
                "clip_length_approximated": prepared.clip_length_approximated,
            }));
            Ok(())
        }
        Command::Synth {
            out,
            videos,
            questions_per_video,
            clips,
            grounding,
            frame_indices,
            accuracy,
            seed,
        } => {
            let spec = SynthSpec {
                videos,
                questions_per_video,
                clips_per_video: clips,
                grounding,
                frame_indices,
                accuracy,
                seed,
                ..SynthSpec::default()
            };
            runner::synthesize(&out, &spec)?;
            let path = out.join("experiment.toml");
            std::fs::write(&path, synth_config(&spec)).map_err(|e| RunError::Io {
                path: path.clone(),
                message: e.to_string(),
            })?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(if cli.verbose { Level::DEBUG } else { Level::INFO })
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
