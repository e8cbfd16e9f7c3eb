//! Samples, candidate corpora, embedding vectors and parse stores.
//!
//! All loaders read line-oriented files completely and hand back immutable
//! values. The `parse_*` variants accept in-memory text and are the entry
//! points exercised by the fuzz targets.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::syntax_metric::{self, DepTree};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("sample {id:?}: {message}")]
    InvalidSpan { id: String, message: String },
    #[error("line {line}: vector for {key:?} has dimension {found}, expected {expected}")]
    Dimension {
        line: usize,
        key: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: vector for {key:?} contains a non-finite value")]
    NonFinite { line: usize, key: String },
    #[error("line {line}: duplicate embedding key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("embedding file contains no vectors")]
    EmptyEmbeddings,
    #[error("{file}: {source}")]
    Parse {
        file: PathBuf,
        #[source]
        source: syntax_metric::ConlluError,
    },
}

/// Gold causal label of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Yes,
    No,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Yes => "Yes",
            Label::No => "No",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An event mention inside a sample context. Offsets count Unicode scalar
/// values, `char_end` is exclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpan {
    pub surface: String,
    #[serde(rename = "start")]
    pub char_start: usize,
    #[serde(rename = "end")]
    pub char_end: usize,
}

impl EventSpan {
    pub fn new(surface: impl Into<String>, char_start: usize, char_end: usize) -> Self {
        Self {
            surface: surface.into(),
            char_start,
            char_end,
        }
    }

    /// Key under which the event vector is stored in an [`EmbeddingStore`].
    pub fn embedding_key(&self) -> String {
        normalize_key(&self.surface)
    }

    fn check(&self, context: &str) -> Result<(), String> {
        if self.char_start >= self.char_end {
            return Err(format!(
                "span {}..{} of {:?} is empty or reversed",
                self.char_start, self.char_end, self.surface
            ));
        }
        let covered: String = context
            .chars()
            .skip(self.char_start)
            .take(self.char_end - self.char_start)
            .collect();
        if covered.chars().count() != self.char_end - self.char_start {
            return Err(format!(
                "span {}..{} of {:?} exceeds the context length",
                self.char_start, self.char_end, self.surface
            ));
        }
        if covered != self.surface {
            return Err(format!(
                "span {}..{} covers {:?}, not {:?}",
                self.char_start, self.char_end, covered, self.surface
            ));
        }
        Ok(())
    }
}

/// One event causality instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub context: String,
    pub source: EventSpan,
    pub target: EventSpan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl Sample {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for span in [&self.source, &self.target] {
            span.check(&self.context)
                .map_err(|message| CorpusError::InvalidSpan {
                    id: self.id.clone(),
                    message,
                })?;
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("sample serialization is infallible")
    }
}

/// Lowercased, whitespace-trimmed lookup key.
pub fn normalize_key(text: &str) -> String {
    text.trim().to_lowercase()
}

pub fn load_corpus(path: &Path) -> Result<Vec<Sample>, CorpusError> {
    parse_corpus(&read(path)?)
}

/// Parses corpus JSONL. Blank lines are ignored; line numbers are 1-based.
pub fn parse_corpus(text: &str) -> Result<Vec<Sample>, CorpusError> {
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample =
            serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                line: idx + 1,
                message: e.to_string(),
            })?;
        if !seen.insert(sample.id.clone()) {
            return Err(CorpusError::DuplicateId(sample.id));
        }
        sample.validate()?;
        samples.push(sample);
    }
    Ok(samples)
}

pub fn write_corpus(samples: &[Sample]) -> String {
    let mut out = String::new();
    for sample in samples {
        out.push_str(&sample.to_json_line());
        out.push('\n');
    }
    out
}

#[derive(Deserialize)]
struct EmbeddingRecord {
    key: String,
    vector: Vec<f64>,
}

/// Precomputed vectors for event surfaces and graph node labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    entries: HashMap<String, Vec<f64>>,
}

impl EmbeddingStore {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    /// Builds a store from in-memory pairs, enforcing the same invariants as
    /// the file loader.
    pub fn from_entries<I>(entries: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut store = Self {
            dimension: 0,
            entries: HashMap::new(),
        };
        for (idx, (key, vector)) in entries.into_iter().enumerate() {
            store.insert(idx + 1, key, vector)?;
        }
        if store.entries.is_empty() {
            return Err(CorpusError::EmptyEmbeddings);
        }
        Ok(store)
    }

    fn insert(&mut self, line: usize, key: String, vector: Vec<f64>) -> Result<(), CorpusError> {
        if self.entries.is_empty() && self.dimension == 0 {
            if vector.is_empty() {
                return Err(CorpusError::Dimension {
                    line,
                    key,
                    expected: 1,
                    found: 0,
                });
            }
            self.dimension = vector.len();
        } else if vector.len() != self.dimension {
            return Err(CorpusError::Dimension {
                line,
                key,
                expected: self.dimension,
                found: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::NonFinite { line, key });
        }
        if self.entries.contains_key(&key) {
            return Err(CorpusError::DuplicateKey { line, key });
        }
        self.entries.insert(key, vector);
        Ok(())
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingStore, CorpusError> {
    parse_embeddings(&read(path)?)
}

pub fn parse_embeddings(text: &str) -> Result<EmbeddingStore, CorpusError> {
    let mut store = EmbeddingStore {
        dimension: 0,
        entries: HashMap::new(),
    };
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        // serde_json rejects NaN/Infinity literals, which surfaces here as a
        // malformed line rather than NonFinite; huge exponents overflow to inf.
        let record: EmbeddingRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(_) if line.contains("NaN") || line.contains("Infinity") => {
                let key = extract_key_lossy(line).unwrap_or_default();
                return Err(CorpusError::NonFinite { line: idx + 1, key });
            }
            Err(e) => {
                return Err(CorpusError::Malformed {
                    line: idx + 1,
                    message: e.to_string(),
                })
            }
        };
        store.insert(idx + 1, record.key, record.vector)?;
    }
    if store.entries.is_empty() {
        return Err(CorpusError::EmptyEmbeddings);
    }
    Ok(store)
}

fn extract_key_lossy(line: &str) -> Option<String> {
    let start = line.find("\"key\"")? + 5;
    let rest = &line[start..];
    let open = rest.find('"')? + 1;
    let close = rest[open..].find('"')?;
    Some(rest[open..open + close].to_string())
}

/// Dependency trees keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParseStore {
    trees: BTreeMap<String, DepTree>,
}

impl ParseStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, tree: DepTree) {
        self.trees.insert(id.into(), tree);
    }

    pub fn get(&self, id: &str) -> Option<&DepTree> {
        self.trees.get(id)
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.trees.keys().map(String::as_str)
    }
}

/// Loads every `<id>.conllu` file in `dir`. Other files are ignored.
pub fn load_parses(dir: &Path) -> Result<ParseStore, CorpusError> {
    let entries = fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("conllu") && path.is_file() {
            files.push(path);
        }
    }
    files.sort();

    let mut store = ParseStore::new();
    for path in files {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let text = read(&path)?;
        let tree = syntax_metric::build_tree(&text).map_err(|source| CorpusError::Parse {
            file: path.clone(),
            source,
        })?;
        store.insert(id, tree);
    }
    Ok(store)
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}
