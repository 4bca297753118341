//! Declarative experiment configuration (TOML).
//!
//! Relative paths resolve against the config file's directory. Only
//! `backend.api_key` is interpolated from the environment (`"${VAR}"`); it
//! never enters a digest or an output file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{RatePolicy, RequestParams};
use crate::metrics::{MultiIntervalPolicy, Pricing};
use crate::prompt::{PromptSettings, Strategy};
use crate::sampler::SamplerConfig;

use super::RunError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    pub captions: PathBuf,
    pub qa: PathBuf,
    #[serde(default)]
    pub grounding: Option<PathBuf>,
    #[serde(default)]
    pub categories: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// OpenAI-compatible endpoint.
    Live {
        base_url: String,
        #[serde(default, skip_serializing)]
        api_key: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_s: u64,
        /// Overrides the derived `openai:<base_url>` id.
        #[serde(default)]
        backend_id: Option<String>,
    },
    Mock {
        rulebook: PathBuf,
    },
    /// Serve only from the cache, as recorded under `backend_id`.
    Replay {
        backend_id: String,
    },
}

fn default_timeout() -> u64 {
    120
}

impl BackendConfig {
    pub fn timeout(&self) -> Duration {
        match self {
            Self::Live { timeout_s, .. } => Duration::from_secs(*timeout_s),
            _ => Duration::from_secs(default_timeout()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusPaths,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub strategy: Strategy,
    #[serde(default)]
    pub prompt: PromptSettings,
    /// Directory of template assets; the built-in set when absent.
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    pub model: RequestParams,
    pub backend: BackendConfig,
    #[serde(default)]
    pub rate: RatePolicy,
    #[serde(default)]
    pub pricing: Pricing,
    #[serde(default)]
    pub grounding_policy: MultiIntervalPolicy,
    #[serde(default = "one")]
    pub workers: usize,
    pub cache_path: PathBuf,
    pub output_dir: PathBuf,
    /// Per-video duration used to normalize throughput.
    #[serde(default = "default_video_duration")]
    pub video_duration_s: f64,
    /// Seed for synthetic fixtures only; live calls are never seeded.
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_video_duration() -> f64 {
    180.0
}

fn interpolate_env(value: &str) -> Result<String, RunError> {
    match value.strip_prefix("${").and_then(|v| v.strip_suffix('}')) {
        Some(var) => std::env::var(var)
            .map_err(|_| RunError::Validation(format!("environment variable {var} is not set"))),
        None => Ok(value.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, RunError> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| RunError::Validation(format!("config: {e}")))?;
        if let BackendConfig::Live { api_key: Some(key), .. } = &mut cfg.backend {
            *key = interpolate_env(key)?;
        }
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus.captions);
        fix(&mut self.corpus.qa);
        if let Some(p) = self.corpus.grounding.as_mut() {
            fix(p);
        }
        if let Some(p) = self.corpus.categories.as_mut() {
            fix(p);
        }
        if let Some(p) = self.templates_dir.as_mut() {
            fix(p);
        }
        if let BackendConfig::Mock { rulebook } = &mut self.backend {
            fix(rulebook);
        }
        fix(&mut self.cache_path);
        fix(&mut self.output_dir);
    }

    /// Checks that need no file access.
    pub fn validate_static(&self) -> Result<(), RunError> {
        let v = |m: String| RunError::Validation(m);
        self.sampler.validate().map_err(|e| v(e.to_string()))?;
        self.rate.validate().map_err(v)?;
        if self.workers == 0 {
            return Err(v("workers must be >= 1".into()));
        }
        if !(self.video_duration_s.is_finite() && self.video_duration_s > 0.0) {
            return Err(v("video_duration_s must be positive".into()));
        }
        if let Strategy::SummarizeThenAnswer { n_words: 0, .. } = self.strategy {
            return Err(v("n_words must be >= 1".into()));
        }
        if self.model.model.trim().is_empty() {
            return Err(v("model.model must be set".into()));
        }
        if !(self.model.temperature.is_finite() && self.model.temperature >= 0.0) {
            return Err(v("model.temperature must be >= 0".into()));
        }
        if self.model.max_output_tokens == Some(0) {
            return Err(v("model.max_output_tokens must be positive".into()));
        }
        match (self.strategy.is_grounding(), self.corpus.grounding.is_some()) {
            (true, false) => return Err(v("the grounding strategy needs corpus.grounding labels".into())),
            (false, true) => {
                return Err(v("grounding labels were given but the strategy does not produce intervals".into()))
            }
            _ => {}
        }
        if let BackendConfig::Replay { .. } = self.backend {
            if !self.cache_path.exists() {
                return Err(v(format!(
                    "replay-only mode needs an existing cache at {}",
                    self.cache_path.display()
                )));
            }
        }
        Ok(())
    }

    /// Digest of the whole config minus credentials.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}
