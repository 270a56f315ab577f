//! JSON Lines dataset manifests.
//!
//! One object per line:
//!
//! ```text
//! {"id":"img_0001","scores_path":"scores/img_0001.npy","mask_path":"masks/img_0001.npy"}
//! {"id":"img_0002","scores_path":"...","mask_path":"...","image_path":"photos/img_0002.png"}
//! ```
//!
//! Relative paths resolve against the manifest's directory. Blank lines are
//! skipped. Ids must be unique.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::npy;
use crate::types::{GroundTruthMask, ScoreTensor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub scores_path: PathBuf,
    pub mask_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let manifest = Manifest { entries };
        manifest.validate(Path::new("<memory>"))?;
        Ok(manifest)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn validate(&self, origin: &Path) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            let problem = if e.id.is_empty() {
                Some("empty id".to_string())
            } else if e.scores_path.as_os_str().is_empty() || e.mask_path.as_os_str().is_empty() {
                Some(format!("entry {:?} has an empty path", e.id))
            } else if !seen.insert(e.id.as_str()) {
                Some(format!("duplicate id {:?}", e.id))
            } else {
                None
            };
            if let Some(message) = problem {
                return Err(Error::Manifest {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    message,
                });
            }
        }
        Ok(())
    }

    /// Parses JSONL text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut entry: ManifestEntry =
                serde_json::from_str(line).map_err(|e| Error::Manifest {
                    path: origin.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            entry.scores_path = base.join(&entry.scores_path);
            entry.mask_path = base.join(&entry.mask_path);
            entry.image_path = entry.image_path.map(|p| base.join(p));
            entries.push(entry);
        }
        let manifest = Manifest { entries };
        manifest.validate(origin)?;
        Ok(manifest)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::new();
        for line in BufReader::new(file).lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base, path)
    }

    /// Writes entries in order, with paths relative to the manifest's
    /// directory so a dataset tree can be moved as a whole.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = std::path::absolute(path.parent().unwrap_or(Path::new("")))
            .map_err(|e| Error::io(path, e))?;
        let store = |p: &Path| -> Result<PathBuf> {
            let abs = std::path::absolute(p).map_err(|e| Error::io(p, e))?;
            Ok(pathdiff::diff_paths(&abs, &base).unwrap_or(abs))
        };
        let mut out = Vec::new();
        for e in &self.entries {
            let stored = ManifestEntry {
                id: e.id.clone(),
                scores_path: store(&e.scores_path)?,
                mask_path: store(&e.mask_path)?,
                image_path: e.image_path.as_deref().map(store).transpose()?,
            };
            serde_json::to_writer(&mut out, &stored)?;
            out.push(b'\n');
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&out).map_err(|e| Error::io(path, e))
    }

    /// Loads every (scores, mask) pair in manifest order. Files are read in
    /// parallel; masks take their class count from the paired scores.
    pub fn load(&self, validate_scores: bool) -> Result<Vec<(ScoreTensor, GroundTruthMask)>> {
        self.entries
            .par_iter()
            .map(|e| load_pair(e, validate_scores))
            .collect()
    }
}

pub fn load_pair(entry: &ManifestEntry, validate_scores: bool) -> Result<(ScoreTensor, GroundTruthMask)> {
    let scores = npy::read_scores(&entry.scores_path, validate_scores)?;
    let mask = npy::read_mask(&entry.mask_path)?.into_mask(scores.dims().k)?;
    scores.dims().ensure_spatial(&mask.dims())?;
    Ok((scores, mask))
}
