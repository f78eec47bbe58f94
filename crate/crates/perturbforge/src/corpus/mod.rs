//! Corpus manifests, train/test splitting, and the synthetic stand-in corpus.
//!
//! A manifest is a UTF-8 line-delimited file: a header record naming the
//! corpus followed by one JSON record per image with keys `path`, `label`,
//! `split`. Paths are stored relative to the manifest location so a corpus
//! directory can be moved or compared byte-for-byte across runs.

mod synthetic;

pub use synthetic::{generate_synthetic_corpus, SyntheticSpec};

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed manifest record: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("manifest references missing files: {0:?}", files)]
    MissingFiles { files: Vec<PathBuf> },
    #[error("manifest contains duplicate paths: {0:?}", files)]
    DuplicatePaths { files: Vec<PathBuf> },
    #[error("class {label} has {count} members, need at least {min}")]
    ClassTooSmall {
        label: Label,
        count: usize,
        min: usize,
    },
    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f32),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Spam,
    Ham,
}

impl Label {
    /// Class index under the normal label encoding: ham = 0, spam = 1.
    pub fn index(self) -> usize {
        match self {
            Label::Ham => 0,
            Label::Spam => 1,
        }
    }

    pub fn from_index(idx: usize) -> Label {
        if idx == 0 {
            Label::Ham
        } else {
            Label::Spam
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Spam => write!(f, "spam"),
            Label::Ham => write!(f, "ham"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Label,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct HeaderRecord {
    corpus: String,
}

/// An ordered list of labeled, split-assigned images rooted at a directory.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub corpus_id: String,
    /// Directory entry paths are relative to; not serialized.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl CorpusManifest {
    pub fn new(corpus_id: impl Into<String>, root: impl Into<PathBuf>) -> Self {
        CorpusManifest {
            corpus_id: corpus_id.into(),
            root: root.into(),
            entries: Vec::new(),
        }
    }

    /// Absolute path of an entry's image file.
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn select(&self, split: Option<Split>, label: Option<Label>) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| split.is_none_or(|s| e.split == s))
            .filter(|e| label.is_none_or(|l| e.label == l))
            .collect()
    }

    pub fn count(&self, split: Option<Split>, label: Option<Label>) -> usize {
        self.select(split, label).len()
    }
}

pub fn save_manifest(manifest: &CorpusManifest, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| CorpusError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let mut out = Vec::new();
    let header = HeaderRecord {
        corpus: manifest.corpus_id.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes")).unwrap();
    for entry in &manifest.entries {
        writeln!(out, "{}", serde_json::to_string(entry).expect("entry serializes")).unwrap();
    }
    fs::write(path, out).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load and validate a manifest: every referenced file must exist, labels
/// and splits must parse, and no path may repeat. Missing files are listed
/// exhaustively.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let mut manifest = CorpusManifest::new("", root);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if i == 0 {
            if let Ok(header) = serde_json::from_str::<HeaderRecord>(line) {
                manifest.corpus_id = header.corpus;
                continue;
            }
        }
        let entry: ManifestEntry =
            serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail: e.to_string(),
            })?;
        manifest.entries.push(entry);
    }
    let mut seen = BTreeSet::new();
    let mut duplicates = Vec::new();
    let mut missing = Vec::new();
    for entry in &manifest.entries {
        if !seen.insert(entry.path.clone()) {
            duplicates.push(entry.path.clone());
        }
        if !manifest.resolve(entry).is_file() {
            missing.push(entry.path.clone());
        }
    }
    if !duplicates.is_empty() {
        return Err(CorpusError::DuplicatePaths { files: duplicates });
    }
    if !missing.is_empty() {
        return Err(CorpusError::MissingFiles { files: missing });
    }
    Ok(manifest)
}

/// Reassign splits, stratified by label: each class contributes
/// `round(test_fraction * class_size)` test items, chosen by a seeded
/// shuffle. Entry order is preserved.
pub fn split_corpus(
    manifest: &CorpusManifest,
    test_fraction: f32,
    seed: u64,
) -> Result<CorpusManifest, CorpusError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(CorpusError::BadFraction(test_fraction));
    }
    let mut out = manifest.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for label in [Label::Spam, Label::Ham] {
        let mut indices: Vec<usize> = manifest
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label)
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            continue;
        }
        if indices.len() < 2 {
            return Err(CorpusError::ClassTooSmall {
                label,
                count: indices.len(),
                min: 2,
            });
        }
        let n_test = ((test_fraction as f64) * indices.len() as f64).round() as usize;
        indices.shuffle(&mut rng);
        for (rank, &i) in indices.iter().enumerate() {
            out.entries[i].split = if rank < n_test { Split::Test } else { Split::Train };
        }
    }
    Ok(out)
}
