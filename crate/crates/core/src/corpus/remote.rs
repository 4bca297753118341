//! HTTP caption source.
//!
//! Wire contract: `POST <endpoint>` with `{"video_id", "start_s", "end_s"}`,
//! answered by `{"clips": [{"start_s", "end_s", "text"}]}`. Fetched tracks are
//! persisted as captions files under the cache directory and served from
//! there on later calls.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{load_caption_tracks, write_caption_tracks, CaptionTrack, ClipCaption, CorpusError, TrackMeta};
use crate::retry::RetryPolicy;

/// The window to caption and the clip metadata of the returned track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub start_s: f64,
    pub end_s: f64,
    pub native_clip_length_s: f64,
}

#[derive(Serialize)]
struct CaptionRequest<'a> {
    video_id: &'a str,
    start_s: f64,
    end_s: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaptionResponse {
    clips: Vec<WireClip>,
}

#[derive(Deserialize)]
struct WireClip {
    start_s: f64,
    end_s: f64,
    text: String,
    #[serde(default)]
    frame_index: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Fetched {
    pub track: CaptionTrack,
    /// HTTP attempts made; 0 when served from the local cache.
    pub attempts: u32,
}

pub struct RemoteCaptionSource {
    endpoint: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    cache_dir: Option<PathBuf>,
}

enum Failure {
    Retryable(String),
    Fatal(CorpusError),
}

impl RemoteCaptionSource {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
            retry,
            cache_dir: None,
        }
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    fn cache_file(&self, video_id: &str) -> Option<PathBuf> {
        let safe = video_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            && !video_id.starts_with('.');
        let stem = if safe {
            video_id.to_string()
        } else {
            hex::encode(video_id.as_bytes())
        };
        self.cache_dir
            .as_ref()
            .map(|d| d.join(format!("{stem}.jsonl")))
    }

    pub fn fetch(&self, video_id: &str, spec: &ClipSpec) -> Result<Fetched, CorpusError> {
        if let Some(path) = self.cache_file(video_id).filter(|p| p.exists()) {
            if let Some(track) = load_caption_tracks(&path)?.remove(video_id) {
                return Ok(Fetched { track, attempts: 0 });
            }
        }
        let mut attempts = 0;
        let track = loop {
            attempts += 1;
            match self.try_once(video_id, spec) {
                Ok(t) => break t,
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    if attempts >= self.retry.max_attempts {
                        return Err(CorpusError::Transport(format!(
                            "{msg} (gave up after {attempts} attempts)"
                        )));
                    }
                    tracing::warn!(video_id, attempt = attempts, error = %msg, "caption fetch failed, retrying");
                    std::thread::sleep(self.retry.delay_after(attempts));
                }
            }
        };
        if let Some(path) = self.cache_file(video_id) {
            write_caption_tracks(&path, [&track])?;
        }
        Ok(Fetched { track, attempts })
    }

    fn try_once(&self, video_id: &str, spec: &ClipSpec) -> Result<CaptionTrack, Failure> {
        let req = CaptionRequest {
            video_id,
            start_s: spec.start_s,
            end_s: spec.end_s,
        };
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(&req)
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(Failure::Fatal(CorpusError::Transport(format!("HTTP {status}"))));
        }
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        parse_response(video_id, spec, &body).map_err(Failure::Fatal)
    }
}

fn parse_response(video_id: &str, spec: &ClipSpec, body: &str) -> Result<CaptionTrack, CorpusError> {
    let parsed: CaptionResponse =
        serde_json::from_str(body).map_err(|e| CorpusError::Schema(e.to_string()))?;
    let clips = parsed
        .clips
        .into_iter()
        .map(|c| ClipCaption {
            video_id: video_id.to_string(),
            start_s: c.start_s,
            end_s: c.end_s,
            text: c.text,
            frame_index: c.frame_index,
            source_index: 0,
        })
        .collect();
    let meta = TrackMeta {
        native_clip_length_s: spec.native_clip_length_s,
        frame_stride: None,
        seconds_per_frame_index: None,
    };
    CaptionTrack::new(video_id, clips, &meta).map_err(|e| CorpusError::Schema(e.to_string()))
}


#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ClipSpec {
        ClipSpec {
            start_s: 0.0,
            end_s: 3.0,
            native_clip_length_s: 1.0,
        }
    }

    #[test]
    fn response_overlap_is_schema_error() {
        let body = r#"{"clips":[{"start_s":0,"end_s":2,"text":"a"},{"start_s":1,"end_s":3,"text":"b"}]}"#;
        let err = parse_response("v", &spec(), body).unwrap_err();
        assert!(matches!(err, CorpusError::Schema(_)), "{err}");
    }

    #[test]
    fn response_missing_field_is_schema_error() {
        let err = parse_response("v", &spec(), r#"{"clips":[{"start_s":0,"text":"a"}]}"#).unwrap_err();
        assert!(matches!(err, CorpusError::Schema(_)));
    }

    #[test]
    fn response_sorted_into_track() {
        let body = r#"{"clips":[{"start_s":1,"end_s":2,"text":"b"},{"start_s":0,"end_s":1,"text":"a"}]}"#;
        let t = parse_response("v", &spec(), body).unwrap();
        assert_eq!(t.clips[0].text, "a");
        assert_eq!(t.len(), 2);
    }
}
