//! On-disk corpora: caption tracks, QA items, grounding labels and category maps.
//!
//! Every corpus file is line-delimited JSON. The first non-blank line is a
//! header naming the artifact kind and format version, e.g.
//!
//! ```text
//! {"format":"capqa/captions","version":1,"native_clip_length_s":1.0}
//! {"video_id":"v1","start_s":0.0,"end_s":1.0,"text":"#C C picks up a cup","frame_index":0}
//! ```
//!
//! Loaded structures are immutable and can be shared freely across threads.

mod remote;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use remote::{ClipSpec, Fetched, RemoteCaptionSource};

pub const FORMAT_VERSION: u32 = 1;
pub const CAPTIONS_FORMAT: &str = "capqa/captions";
pub const QA_FORMAT: &str = "capqa/qa";
pub const GROUNDING_FORMAT: &str = "capqa/grounding";
pub const CATEGORIES_FORMAT: &str = "capqa/categories";

/// Number of answer candidates per question.
pub const NUM_OPTIONS: usize = 5;
pub const OPTION_LETTERS: [char; NUM_OPTIONS] = ['A', 'B', 'C', 'D', 'E'];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad header: {message}")]
    Header { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: corpus contains no records")]
    Empty { path: PathBuf },
    #[error("video {video_id}: clip [{start_s}, {end_s}] overlaps the previous clip ending at {prev_end_s}")]
    Overlap {
        video_id: String,
        start_s: f64,
        end_s: f64,
        prev_end_s: f64,
    },
    #[error("video {video_id}: {message}")]
    Track { video_id: String, message: String },
    #[error("duplicate qa_id {0}")]
    DuplicateQa(String),
    #[error("caption source: {0}")]
    Transport(String),
    #[error("caption source returned an invalid response: {0}")]
    Schema(String),
}

fn record_err(path: &Path, line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Record {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipCaption {
    pub video_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<u64>,
    /// Position of the (first) native clip this caption came from.
    #[serde(skip)]
    pub source_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionTrack {
    pub video_id: String,
    pub clips: Vec<ClipCaption>,
    pub native_clip_length_s: f64,
    pub frame_stride: Option<u32>,
    pub seconds_per_frame_index: Option<f64>,
}

/// Track-level metadata shared by all tracks in one captions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackMeta {
    pub native_clip_length_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_stride: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds_per_frame_index: Option<f64>,
}

impl TrackMeta {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.native_clip_length_s.is_finite() && self.native_clip_length_s > 0.0) {
            return Err("native_clip_length_s must be positive".into());
        }
        if self.frame_stride == Some(0) {
            return Err("frame_stride must be positive".into());
        }
        if let Some(s) = self.seconds_per_frame_index {
            if !(s.is_finite() && s > 0.0) {
                return Err("seconds_per_frame_index must be positive".into());
            }
        }
        Ok(())
    }
}

impl CaptionTrack {
    /// Sorts `clips` by start time and checks every track invariant.
    pub fn new(
        video_id: impl Into<String>,
        mut clips: Vec<ClipCaption>,
        meta: &TrackMeta,
    ) -> Result<Self, CorpusError> {
        let video_id = video_id.into();
        meta.validate().map_err(|message| CorpusError::Track {
            video_id: video_id.clone(),
            message,
        })?;
        if clips.is_empty() {
            return Err(CorpusError::Track {
                video_id,
                message: "track has no clips".into(),
            });
        }
        clips.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        for (i, clip) in clips.iter_mut().enumerate() {
            clip.source_index = i;
        }
        let track = Self {
            video_id,
            clips,
            native_clip_length_s: meta.native_clip_length_s,
            frame_stride: meta.frame_stride,
            seconds_per_frame_index: meta.seconds_per_frame_index,
        };
        track.check()?;
        Ok(track)
    }

    pub fn meta(&self) -> TrackMeta {
        TrackMeta {
            native_clip_length_s: self.native_clip_length_s,
            frame_stride: self.frame_stride,
            seconds_per_frame_index: self.seconds_per_frame_index,
        }
    }

    /// Number of clips, N_v.
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Seconds per frame-index unit; falls back to the native clip length.
    pub fn frame_index_seconds(&self) -> f64 {
        self.seconds_per_frame_index
            .unwrap_or(self.native_clip_length_s)
    }

    /// Verifies ordering, non-overlap and per-clip invariants.
    pub fn check(&self) -> Result<(), CorpusError> {
        let track_err = |message: String| CorpusError::Track {
            video_id: self.video_id.clone(),
            message,
        };
        let mut prev: Option<&ClipCaption> = None;
        for clip in &self.clips {
            if clip.video_id != self.video_id {
                return Err(track_err(format!(
                    "clip belongs to video {}",
                    clip.video_id
                )));
            }
            validate_clip(clip).map_err(track_err)?;
            if let Some(p) = prev {
                if clip.start_s < p.end_s {
                    return Err(CorpusError::Overlap {
                        video_id: self.video_id.clone(),
                        start_s: clip.start_s,
                        end_s: clip.end_s,
                        prev_end_s: p.end_s,
                    });
                }
                if let (Some(a), Some(b)) = (p.frame_index, clip.frame_index) {
                    if b <= a {
                        return Err(track_err(format!(
                            "frame_index {b} does not increase past {a}"
                        )));
                    }
                }
            }
            prev = Some(clip);
        }
        Ok(())
    }
}

fn validate_clip(clip: &ClipCaption) -> Result<(), String> {
    if !(clip.start_s.is_finite() && clip.end_s.is_finite()) {
        return Err("timestamps must be finite".into());
    }
    if clip.start_s < 0.0 {
        return Err(format!("start_s {} is negative", clip.start_s));
    }
    if clip.end_s <= clip.start_s {
        return Err(format!(
            "end_s {} must exceed start_s {}",
            clip.end_s, clip.start_s
        ));
    }
    if clip.text.trim().is_empty() {
        return Err("caption text is empty".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub qa_id: String,
    pub video_id: String,
    pub question: String,
    pub options: [String; NUM_OPTIONS],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl QaItem {
    pub fn answer_letter(&self) -> Option<char> {
        self.answer_index.map(|i| OPTION_LETTERS[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingLabel {
    pub qa_id: String,
    pub segments: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryMap {
    pub vocabulary: Vec<String>,
    pub by_qa: BTreeMap<String, Vec<String>>,
}

impl CategoryMap {
    pub fn categories_of(&self, qa_id: &str) -> &[String] {
        self.by_qa.get(qa_id).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Deserialize)]
struct Header {
    format: String,
    version: u32,
    #[serde(flatten)]
    rest: serde_json::Map<String, serde_json::Value>,
}

struct Lines {
    path: PathBuf,
    header: Header,
    records: Vec<(usize, String)>,
}

fn read_lines(path: &Path, format: &str) -> Result<Lines, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let header_err = |message: String| CorpusError::Header {
        path: path.to_path_buf(),
        message,
    };
    let (_, first) = rows
        .next()
        .ok_or_else(|| CorpusError::Empty { path: path.to_path_buf() })?;
    let header: Header =
        serde_json::from_str(first).map_err(|e| header_err(e.to_string()))?;
    if header.format != format {
        return Err(header_err(format!(
            "expected format {format:?}, found {:?}",
            header.format
        )));
    }
    if header.version != FORMAT_VERSION {
        return Err(header_err(format!(
            "unsupported version {} (expected {FORMAT_VERSION})",
            header.version
        )));
    }
    let records: Vec<(usize, String)> = rows.map(|(n, l)| (n, l.to_string())).collect();
    if records.is_empty() {
        return Err(CorpusError::Empty { path: path.to_path_buf() });
    }
    Ok(Lines {
        path: path.to_path_buf(),
        header,
        records,
    })
}

impl Lines {
    fn header_as<T: DeserializeOwned>(&self) -> Result<T, CorpusError> {
        serde_json::from_value(serde_json::Value::Object(self.header.rest.clone())).map_err(
            |e| CorpusError::Header {
                path: self.path.clone(),
                message: e.to_string(),
            },
        )
    }

    fn parse<T: DeserializeOwned>(&self) -> Result<Vec<(usize, T)>, CorpusError> {
        self.records
            .iter()
            .map(|(n, l)| {
                serde_json::from_str(l)
                    .map(|r| (*n, r))
                    .map_err(|e| record_err(&self.path, *n, e.to_string()))
            })
            .collect()
    }
}

/// Loads every caption track in a captions file, one per `video_id`.
pub fn load_caption_tracks(path: &Path) -> Result<BTreeMap<String, CaptionTrack>, CorpusError> {
    let lines = read_lines(path, CAPTIONS_FORMAT)?;
    let meta: TrackMeta = lines.header_as()?;
    meta.validate().map_err(|message| CorpusError::Header {
        path: path.to_path_buf(),
        message,
    })?;
    let mut grouped: BTreeMap<String, Vec<ClipCaption>> = BTreeMap::new();
    for (line, clip) in lines.parse::<ClipCaption>()? {
        validate_clip(&clip).map_err(|m| record_err(path, line, m))?;
        grouped.entry(clip.video_id.clone()).or_default().push(clip);
    }
    grouped
        .into_iter()
        .map(|(vid, clips)| CaptionTrack::new(vid.clone(), clips, &meta).map(|t| (vid, t)))
        .collect()
}

/// Writes tracks sharing one [`TrackMeta`] into a captions file.
pub fn write_caption_tracks<'a>(
    path: &Path,
    tracks: impl IntoIterator<Item = &'a CaptionTrack>,
) -> Result<(), CorpusError> {
    let tracks: Vec<&CaptionTrack> = tracks.into_iter().collect();
    let Some(first) = tracks.first() else {
        return Err(CorpusError::Empty { path: path.to_path_buf() });
    };
    let meta = first.meta();
    if tracks.iter().any(|t| t.meta() != meta) {
        return Err(CorpusError::Header {
            path: path.to_path_buf(),
            message: "tracks written to one file must share clip metadata".into(),
        });
    }
    let mut header = serde_json::to_value(&meta).expect("meta serializes");
    let obj = header.as_object_mut().expect("meta is an object");
    obj.insert("format".into(), CAPTIONS_FORMAT.into());
    obj.insert("version".into(), FORMAT_VERSION.into());
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for t in &tracks {
        for c in &t.clips {
            out.push_str(&serde_json::to_string(c).expect("clip serializes"));
            out.push('\n');
        }
    }
    write_atomically(path, out.as_bytes())
}

pub(crate) fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io)?;
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

#[derive(Deserialize)]
struct QaRecord {
    qa_id: String,
    video_id: String,
    question: String,
    options: Vec<String>,
    #[serde(default)]
    answer_index: Option<usize>,
    #[serde(default)]
    categories: Vec<String>,
}

/// Loads QA items sorted by `qa_id`.
pub fn load_qa(path: &Path) -> Result<Vec<QaItem>, CorpusError> {
    let lines = read_lines(path, QA_FORMAT)?;
    let mut items: BTreeMap<String, QaItem> = BTreeMap::new();
    for (line, rec) in lines.parse::<QaRecord>()? {
        let options: [String; NUM_OPTIONS] = rec.options.try_into().map_err(|v: Vec<String>| {
            record_err(
                path,
                line,
                format!("expected 5 options, found {}", v.len()),
            )
        })?;
        if rec.question.trim().is_empty() {
            return Err(record_err(path, line, "question is empty"));
        }
        if let Some(a) = rec.answer_index {
            if a >= NUM_OPTIONS {
                return Err(record_err(
                    path,
                    line,
                    format!("answer_index {a} out of range 0-4"),
                ));
            }
        }
        if items.contains_key(&rec.qa_id) {
            return Err(CorpusError::DuplicateQa(rec.qa_id));
        }
        items.insert(
            rec.qa_id.clone(),
            QaItem {
                qa_id: rec.qa_id,
                video_id: rec.video_id,
                question: rec.question,
                options,
                answer_index: rec.answer_index,
                categories: rec.categories,
            },
        );
    }
    Ok(items.into_values().collect())
}

pub fn write_qa(path: &Path, items: &[QaItem]) -> Result<(), CorpusError> {
    let mut out = format!(
        "{{\"format\":\"{QA_FORMAT}\",\"version\":{FORMAT_VERSION}}}\n"
    );
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("qa serializes"));
        out.push('\n');
    }
    write_atomically(path, out.as_bytes())
}

/// Loads grounding labels. Ids missing from `known_qa` are kept but logged.
pub fn load_grounding(
    path: &Path,
    known_qa: Option<&BTreeSet<String>>,
) -> Result<BTreeMap<String, GroundingLabel>, CorpusError> {
    let lines = read_lines(path, GROUNDING_FORMAT)?;
    let mut labels: BTreeMap<String, GroundingLabel> = BTreeMap::new();
    for (line, mut rec) in lines.parse::<GroundingLabel>()? {
        if rec.segments.is_empty() {
            return Err(record_err(path, line, "no segments"));
        }
        for [s, e] in &rec.segments {
            if !(s.is_finite() && e.is_finite()) || *s < 0.0 {
                return Err(record_err(path, line, format!("invalid segment [{s}, {e}]")));
            }
            if e <= s {
                return Err(record_err(
                    path,
                    line,
                    format!("inverted segment [{s}, {e}]"),
                ));
            }
        }
        rec.segments.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
        if let Some(known) = known_qa {
            if !known.contains(&rec.qa_id) {
                tracing::warn!(qa_id = %rec.qa_id, "grounding label for unknown qa_id");
            }
        }
        match labels.get_mut(&rec.qa_id) {
            Some(existing) => {
                existing.segments.extend(rec.segments);
                existing
                    .segments
                    .sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
            }
            None => {
                labels.insert(rec.qa_id.clone(), rec);
            }
        }
    }
    Ok(labels)
}

/// Grounding ids with no matching QA item.
pub fn unmatched_grounding_ids(
    labels: &BTreeMap<String, GroundingLabel>,
    qa: &[QaItem],
) -> Vec<String> {
    let ids: BTreeSet<&str> = qa.iter().map(|q| q.qa_id.as_str()).collect();
    labels
        .keys()
        .filter(|k| !ids.contains(k.as_str()))
        .cloned()
        .collect()
}

#[derive(Deserialize)]
struct CategoryHeader {
    vocabulary: Vec<String>,
}

#[derive(Deserialize)]
struct CategoryRecord {
    qa_id: String,
    categories: Vec<String>,
}

pub fn load_categories(path: &Path) -> Result<CategoryMap, CorpusError> {
    let lines = read_lines(path, CATEGORIES_FORMAT)?;
    let header: CategoryHeader = lines.header_as()?;
    let vocab: BTreeSet<&str> = header.vocabulary.iter().map(String::as_str).collect();
    let mut by_qa: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (line, rec) in lines.parse::<CategoryRecord>()? {
        for c in &rec.categories {
            if !vocab.contains(c.as_str()) {
                return Err(record_err(
                    path,
                    line,
                    format!("category {c:?} not in declared vocabulary"),
                ));
            }
        }
        let entry = by_qa.entry(rec.qa_id).or_default();
        for c in rec.categories {
            if !entry.contains(&c) {
                entry.push(c);
            }
        }
    }
    Ok(CategoryMap {
        vocabulary: header.vocabulary,
        by_qa,
    })
}

/// Copies category labels from `map` onto the items, keeping any inline labels.
pub fn attach_categories(items: &mut [QaItem], map: &CategoryMap) {
    for item in items {
        for c in map.categories_of(&item.qa_id) {
            if !item.categories.contains(c) {
                item.categories.push(c.clone());
            }
        }
    }
}
