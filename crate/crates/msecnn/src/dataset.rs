//! Annotation parsing, tag-vocabulary selection, split policy and the
//! dataset manifest.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use msecnn_core::audio::SpectrogramConfig;
use serde::{Deserialize, Serialize};

use crate::error::{AnnotationError, Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRow {
    pub clip_id: String,
    pub labels: Vec<bool>,
    /// Audio path relative to the audio root.
    pub path: String,
    /// 1-based line in the source file.
    pub line: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationTable {
    pub tags: Vec<String>,
    pub rows: Vec<AnnotationRow>,
}

/// Reads a tab-separated annotation file: `clip_id`, one 0/1 column per tag,
/// then the relative audio path. Cells may be double-quoted.
pub fn parse_annotations(path: &Path) -> Result<AnnotationTable> {
    let bytes = fsutil::read(path)?;
    parse_annotations_bytes(&bytes, path)
}

pub fn parse_annotations_bytes(bytes: &[u8], path: &Path) -> Result<AnnotationTable> {
    let p = || path.to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|source| AnnotationError::Csv { path: p(), source })?,
        None => return Err(AnnotationError::MissingHeader { path: p() }.into()),
    };
    let header: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    if header.iter().all(|h| h.is_empty()) {
        return Err(AnnotationError::MissingHeader { path: p() }.into());
    }
    if header.len() < 3 || header[0] != "clip_id" {
        return Err(AnnotationError::BadHeader { path: p() }.into());
    }
    let tags = header[1..header.len() - 1].to_vec();
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for rec in records {
        let rec = rec.map_err(|source| AnnotationError::Csv { path: p(), source })?;
        let line = rec.position().map_or(0, |pos| pos.line());
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != header.len() {
            return Err(AnnotationError::FieldCount {
                path: p(),
                line,
                expected: header.len(),
                found: rec.len(),
            }
            .into());
        }
        let clip_id = rec[0].trim().to_string();
        let mut labels = Vec::with_capacity(tags.len());
        for (j, tag) in tags.iter().enumerate() {
            labels.push(match rec[j + 1].trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(AnnotationError::NonBinary {
                        path: p(),
                        line,
                        column: j + 2,
                        tag: tag.clone(),
                        value: other.to_string(),
                    }
                    .into())
                }
            });
        }
        if !seen.insert(clip_id.clone()) {
            return Err(AnnotationError::Duplicate {
                path: p(),
                line,
                clip_id,
            }
            .into());
        }
        rows.push(AnnotationRow {
            clip_id,
            labels,
            path: rec[header.len() - 1].trim().to_string(),
            line,
        });
    }
    Ok(AnnotationTable { tags, rows })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledClip {
    pub clip_id: String,
    pub audio_path: String,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSelection {
    /// Kept vocabulary, most frequent first.
    pub tags: Vec<String>,
    pub clips: Vec<LabeledClip>,
    pub log: Vec<String>,
}

/// Keeps the `k` most frequent tags (ties broken alphabetically) and drops
/// clips left without any positive label.
pub fn select_top_tags(table: &AnnotationTable, k: usize) -> Result<TagSelection> {
    if k == 0 || k > table.tags.len() {
        return Err(Error::Data(format!(
            "cannot keep {k} tags from a vocabulary of {}",
            table.tags.len()
        )));
    }
    let mut counts: Vec<(usize, &str, usize)> = table
        .tags
        .iter()
        .enumerate()
        .map(|(j, t)| (table.rows.iter().filter(|r| r.labels[j]).count(), t.as_str(), j))
        .collect();
    counts.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let mut log = Vec::new();
    if k < counts.len() && counts[k - 1].0 == counts[k].0 {
        let n = counts[k].0;
        let dropped: Vec<&str> = counts[k..].iter().take_while(|c| c.0 == n).map(|c| c.1).collect();
        log.push(format!(
            "frequency tie at rank {k} (count {n}): kept {:?}, dropped {:?} by alphabetical order",
            counts[k - 1].1,
            dropped
        ));
    }
    let kept = &counts[..k];
    let mut clips = Vec::new();
    let mut dropped = 0usize;
    for row in &table.rows {
        let labels: Vec<u8> = kept.iter().map(|&(_, _, j)| row.labels[j] as u8).collect();
        if labels.iter().all(|&v| v == 0) {
            dropped += 1;
            continue;
        }
        clips.push(LabeledClip {
            clip_id: row.clip_id.clone(),
            audio_path: row.path.clone(),
            labels,
        });
    }
    if dropped > 0 {
        log.push(format!("dropped {dropped} clips with no kept tag"));
    }
    Ok(TagSelection {
        tags: kept.iter().map(|c| c.1.to_string()).collect(),
        clips,
        log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Leading directory 0-b is train, c is val, d-f is test.
pub fn split_of(path: &str) -> Result<Split> {
    let first = path.split(['/', '\\']).next().unwrap_or("");
    let mut chars = first.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => match c.to_ascii_lowercase() {
            '0'..='9' | 'a' | 'b' => Ok(Split::Train),
            'c' => Ok(Split::Val),
            'd'..='f' => Ok(Split::Test),
            _ => Err(Error::Split { path: path.into() }),
        },
        _ => Err(Error::Split { path: path.into() }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub audio_path: String,
    pub labels: Vec<u8>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Front end the feature cache was built with.
    pub frontend: SpectrogramConfig,
    pub tags: Vec<String>,
    pub clips: Vec<ClipRecord>,
    /// Notes from tag selection (ties, dropped clips).
    #[serde(default)]
    pub log: Vec<String>,
}

pub fn split_by_part(selection: TagSelection, frontend: SpectrogramConfig) -> Result<DatasetManifest> {
    let clips = selection
        .clips
        .into_iter()
        .map(|c| {
            Ok(ClipRecord {
                split: split_of(&c.audio_path)?,
                clip_id: c.clip_id,
                audio_path: c.audio_path,
                labels: c.labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = DatasetManifest {
        frontend,
        tags: selection.tags,
        clips,
        log: selection.log,
    };
    m.validate()?;
    Ok(m)
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let t = self.tags.len();
        let mut ids = HashSet::new();
        for c in &self.clips {
            if c.labels.len() != t || c.labels.iter().any(|&v| v > 1) {
                return Err(Error::Data(format!(
                    "clip {:?} needs {t} binary labels, has {:?}",
                    c.clip_id, c.labels
                )));
            }
            if !ids.insert(c.clip_id.as_str()) {
                return Err(Error::Data(format!("clip {:?} listed twice", c.clip_id)));
            }
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipRecord> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn split_counts(&self) -> BTreeMap<Split, usize> {
        let mut m = BTreeMap::new();
        for c in &self.clips {
            *m.entry(c.split).or_insert(0) += 1;
        }
        m
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Document {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Document {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Self::from_json(&text, path)
    }
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn default_manifest_path(cache_dir: &Path) -> PathBuf {
    cache_dir.join(MANIFEST_FILE)
}
