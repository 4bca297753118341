//! Clip-length and clip-sampling policies, and rendering of the caption block.
//!
//! Longer clip lengths are approximated by merging consecutive native
//! captions; there is no captioner to re-run at the coarser granularity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CaptionTrack, ClipCaption};

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("clip length {target}s is not a positive integer multiple of the native {native}s")]
    NotAMultiple { target: f64, native: f64 },
    #[error("sampling stride must be >= 1")]
    ZeroStride,
    #[error("index stride must be >= 1")]
    ZeroIndexStride,
    #[error("video {0}: frame numbering needs stored frame indices or an index stride")]
    NoFrameIndex(String),
    #[error("video {0}: no captions to render")]
    EmptyTrack(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Numbering {
    #[default]
    Off,
    FrameIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Merged clip length; `None` keeps the native length.
    #[serde(default)]
    pub target_clip_length_s: Option<f64>,
    /// Keep one clip every `sampling_stride` clips.
    #[serde(default = "one")]
    pub sampling_stride: usize,
    #[serde(default)]
    pub numbering: Numbering,
    /// Frame-index step between consecutive captions when no stored index exists.
    #[serde(default)]
    pub index_stride: Option<u64>,
}

fn one() -> usize {
    1
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            target_clip_length_s: None,
            sampling_stride: 1,
            numbering: Numbering::Off,
            index_stride: None,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.sampling_stride == 0 {
            return Err(SamplerError::ZeroStride);
        }
        if self.index_stride == Some(0) {
            return Err(SamplerError::ZeroIndexStride);
        }
        Ok(())
    }

    /// Clip length the rendered captions describe.
    pub fn effective_clip_length(&self, track: &CaptionTrack) -> f64 {
        self.target_clip_length_s
            .unwrap_or(track.native_clip_length_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionBlock {
    pub text: String,
    pub selected_count: usize,
    pub source_indices: Vec<usize>,
    pub numbered: bool,
}

/// Ratio `target / native` as an integer, if it is one.
fn merge_factor(target: f64, native: f64) -> Result<usize, SamplerError> {
    let err = SamplerError::NotAMultiple { target, native };
    if !(target.is_finite() && target > 0.0) {
        return Err(err);
    }
    let ratio = target / native;
    let m = ratio.round();
    if m < 1.0 || (ratio - m).abs() > 1e-9 * ratio.max(1.0) {
        return Err(err);
    }
    Ok(m as usize)
}

/// Merges runs of consecutive native captions into clips of `target_s` seconds.
pub fn merge_to_length(track: &CaptionTrack, target_s: f64) -> Result<CaptionTrack, SamplerError> {
    let m = merge_factor(target_s, track.native_clip_length_s)?;
    if m == 1 {
        return Ok(track.clone());
    }
    let clips = track
        .clips
        .chunks(m)
        .map(|group| {
            let first = &group[0];
            let last = &group[group.len() - 1];
            ClipCaption {
                video_id: first.video_id.clone(),
                start_s: first.start_s,
                end_s: last.end_s,
                text: group
                    .iter()
                    .map(|c| c.text.trim())
                    .collect::<Vec<_>>()
                    .join(" "),
                frame_index: first.frame_index,
                source_index: first.source_index,
            }
        })
        .collect();
    Ok(CaptionTrack {
        video_id: track.video_id.clone(),
        clips,
        native_clip_length_s: target_s,
        frame_stride: track.frame_stride.map(|s| s * m as u32),
        seconds_per_frame_index: track.seconds_per_frame_index,
    })
}

/// Keeps the clips at positions `0, k, 2k, ...`.
pub fn subsample(track: &CaptionTrack, k: usize) -> Result<CaptionTrack, SamplerError> {
    if k == 0 {
        return Err(SamplerError::ZeroStride);
    }
    if k == 1 {
        return Ok(track.clone());
    }
    Ok(CaptionTrack {
        video_id: track.video_id.clone(),
        clips: track.clips.iter().step_by(k).cloned().collect(),
        native_clip_length_s: track.native_clip_length_s,
        frame_stride: track.frame_stride.map(|s| s * k as u32),
        seconds_per_frame_index: track.seconds_per_frame_index,
    })
}

/// Applies the merge then the stride of `config`.
pub fn select(track: &CaptionTrack, config: &SamplerConfig) -> Result<CaptionTrack, SamplerError> {
    config.validate()?;
    let merged = match config.target_clip_length_s {
        Some(l) => merge_to_length(track, l)?,
        None => track.clone(),
    };
    subsample(&merged, config.sampling_stride)
}

fn terminate(text: &str) -> String {
    let t = text.trim();
    if t.ends_with(['.', '!', '?']) {
        t.to_string()
    } else {
        format!("{t}.")
    }
}

/// Concatenates the selected captions into the block fed to the model.
pub fn render_block(track: &CaptionTrack, config: &SamplerConfig) -> Result<CaptionBlock, SamplerError> {
    let selected = select(track, config)?;
    if selected.is_empty() {
        return Err(SamplerError::EmptyTrack(track.video_id.clone()));
    }
    let numbered = config.numbering == Numbering::FrameIndex;
    let segments = selected
        .clips
        .iter()
        .enumerate()
        .map(|(pos, clip)| {
            let body = terminate(&clip.text);
            if !numbered {
                return Ok(body);
            }
            let idx = clip
                .frame_index
                .or(config.index_stride.map(|s| pos as u64 * s))
                .ok_or_else(|| SamplerError::NoFrameIndex(track.video_id.clone()))?;
            Ok(format!("{idx}: {body}"))
        })
        .collect::<Result<Vec<String>, SamplerError>>()?;
    Ok(CaptionBlock {
        text: segments.join(" "),
        selected_count: segments.len(),
        source_indices: selected.clips.iter().map(|c| c.source_index).collect(),
        numbered,
    })
}
