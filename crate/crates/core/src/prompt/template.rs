//! `${name}` template assets with a manifest of required placeholders.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template {0:?} is not in the manifest")]
    Unknown(String),
    #[error("template {template:?}: placeholder ${{{name}}} has no binding")]
    Unbound { template: String, name: String },
    #[error("template {template:?}: unterminated placeholder at byte {offset}")]
    Unterminated { template: String, offset: usize },
    #[error("template {template:?}: declared placeholders {declared:?} but file uses {found:?}")]
    ManifestMismatch {
        template: String,
        declared: Vec<String>,
        found: Vec<String>,
    },
    #[error("template {template:?}: hole ${{{name}}} must appear exactly once")]
    Hole { template: String, name: String },
    #[error("template assets: {0}")]
    Asset(String),
}

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Lit(String),
    Var(String),
}

#[derive(Debug, Clone)]
pub struct Template {
    name: String,
    segments: Vec<Segment>,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl Template {
    pub fn parse(name: &str, source: &str) -> Result<Self, TemplateError> {
        let mut segments = Vec::new();
        let mut rest = source;
        let mut offset = 0;
        while let Some(pos) = rest.find("${") {
            let after = &rest[pos + 2..];
            let end = after.find('}').ok_or_else(|| TemplateError::Unterminated {
                template: name.to_string(),
                offset: offset + pos,
            })?;
            let var = &after[..end];
            if !is_ident(var) {
                return Err(TemplateError::Unterminated {
                    template: name.to_string(),
                    offset: offset + pos,
                });
            }
            if pos > 0 {
                segments.push(Segment::Lit(rest[..pos].to_string()));
            }
            segments.push(Segment::Var(var.to_string()));
            let consumed = pos + 2 + end + 1;
            offset += consumed;
            rest = &rest[consumed..];
        }
        if !rest.is_empty() {
            segments.push(Segment::Lit(rest.to_string()));
        }
        Ok(Self {
            name: name.to_string(),
            segments,
        })
    }

    pub fn placeholders(&self) -> BTreeSet<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Var(v) => Some(v.as_str()),
                Segment::Lit(_) => None,
            })
            .collect()
    }

    fn push_bound(
        &self,
        out: &mut String,
        name: &str,
        bindings: &BTreeMap<&str, String>,
    ) -> Result<(), TemplateError> {
        let value = bindings.get(name).ok_or_else(|| TemplateError::Unbound {
            template: self.name.clone(),
            name: name.to_string(),
        })?;
        out.push_str(value);
        Ok(())
    }

    pub fn render(&self, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Lit(l) => out.push_str(l),
                Segment::Var(v) => self.push_bound(&mut out, v, bindings)?,
            }
        }
        Ok(out)
    }

    /// Renders everything except `hole`, returning the text before and after it.
    pub fn render_around(
        &self,
        bindings: &BTreeMap<&str, String>,
        hole: &str,
    ) -> Result<(String, String), TemplateError> {
        let count = self
            .segments
            .iter()
            .filter(|s| matches!(s, Segment::Var(v) if v == hole))
            .count();
        if count != 1 {
            return Err(TemplateError::Hole {
                template: self.name.clone(),
                name: hole.to_string(),
            });
        }
        let mut before = String::new();
        let mut after = String::new();
        let mut seen = false;
        for seg in &self.segments {
            let out = if seen { &mut after } else { &mut before };
            match seg {
                Segment::Lit(l) => out.push_str(l),
                Segment::Var(v) if v == hole => seen = true,
                Segment::Var(v) => self.push_bound(out, v, bindings)?,
            }
        }
        Ok((before, after))
    }
}

#[derive(Deserialize)]
struct Manifest {
    version: String,
    templates: BTreeMap<String, ManifestEntry>,
}

#[derive(Deserialize)]
struct ManifestEntry {
    file: String,
    placeholders: Vec<String>,
}

const EMBEDDED_MANIFEST: &str = include_str!("../../templates/manifest.json");
const EMBEDDED_FILES: &[(&str, &str)] = &[
    ("standard.txt", include_str!("../../templates/standard.txt")),
    ("summarize_c.txt", include_str!("../../templates/summarize_c.txt")),
    ("summarize_cq.txt", include_str!("../../templates/summarize_cq.txt")),
    ("summarize_cqa.txt", include_str!("../../templates/summarize_cqa.txt")),
    ("summary_answer.txt", include_str!("../../templates/summary_answer.txt")),
    ("zero_shot_cot.txt", include_str!("../../templates/zero_shot_cot.txt")),
    ("plan_and_solve.txt", include_str!("../../templates/plan_and_solve.txt")),
    ("reask.txt", include_str!("../../templates/reask.txt")),
    ("grounding.txt", include_str!("../../templates/grounding.txt")),
];

/// Every template named in a manifest, validated against its declared placeholders.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    version: String,
    digest: String,
    templates: BTreeMap<String, Template>,
}

impl TemplateSet {
    /// The templates compiled into the binary.
    pub fn embedded() -> Self {
        Self::from_sources(EMBEDDED_MANIFEST, |file| {
            EMBEDDED_FILES
                .iter()
                .find(|(n, _)| *n == file)
                .map(|(_, s)| s.to_string())
                .ok_or_else(|| format!("missing embedded file {file}"))
        })
        .expect("embedded templates are valid")
    }

    /// Loads `manifest.json` and the files it lists from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let manifest = fs::read_to_string(dir.join("manifest.json"))
            .map_err(|e| TemplateError::Asset(format!("{}: {e}", dir.display())))?;
        Self::from_sources(&manifest, |file| {
            fs::read_to_string(dir.join(file)).map_err(|e| format!("{file}: {e}"))
        })
    }

    fn from_sources(
        manifest_src: &str,
        read: impl Fn(&str) -> Result<String, String>,
    ) -> Result<Self, TemplateError> {
        let manifest: Manifest =
            serde_json::from_str(manifest_src).map_err(|e| TemplateError::Asset(e.to_string()))?;
        let mut hasher = Sha256::new();
        hasher.update(manifest_src.as_bytes());
        let mut templates = BTreeMap::new();
        for (name, entry) in &manifest.templates {
            let raw = read(&entry.file).map_err(TemplateError::Asset)?;
            hasher.update(entry.file.as_bytes());
            hasher.update([0]);
            hasher.update(raw.as_bytes());
            hasher.update([0]);
            // files end with one newline that is not part of the prompt
            let body = raw.strip_suffix('\n').unwrap_or(&raw);
            let template = Template::parse(name, body)?;
            let found: BTreeSet<&str> = template.placeholders();
            let declared: BTreeSet<&str> = entry.placeholders.iter().map(String::as_str).collect();
            if found != declared {
                return Err(TemplateError::ManifestMismatch {
                    template: name.clone(),
                    declared: declared.into_iter().map(String::from).collect(),
                    found: found.into_iter().map(String::from).collect(),
                });
            }
            templates.insert(name.clone(), template);
        }
        Ok(Self {
            version: manifest.version,
            digest: hex::encode(hasher.finalize()),
            templates,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// SHA-256 over the manifest and every template file.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn get(&self, name: &str) -> Result<&Template, TemplateError> {
        self.templates
            .get(name)
            .ok_or_else(|| TemplateError::Unknown(name.to_string()))
    }

    pub fn render(&self, name: &str, bindings: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        self.get(name)?.render(bindings)
    }
}
