//! Causal pattern extraction: prompt construction, response parsing and the
//! corpus-wide assignment with its on-disk cache.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Label, Sample};
use crate::json_extract::last_field;
use crate::llm_gateway::{Gateway, GatewayError, ModelSettings};

const POSITIVE_TEMPLATE: &str = include_str!("../data/pattern_positive.txt");
const INFERENCE_TEMPLATE: &str = include_str!("../data/pattern_inference.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CausalPattern {
    Direct,
    Chain,
    Collider,
    Fork,
    Coreference,
    No,
}

impl CausalPattern {
    pub const ALL: [CausalPattern; 6] = [
        CausalPattern::Direct,
        CausalPattern::Chain,
        CausalPattern::Collider,
        CausalPattern::Fork,
        CausalPattern::Coreference,
        CausalPattern::No,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CausalPattern::Direct => "Direct",
            CausalPattern::Chain => "Chain",
            CausalPattern::Collider => "Collider",
            CausalPattern::Fork => "Fork",
            CausalPattern::Coreference => "Coreference",
            CausalPattern::No => "No",
        }
    }
}

impl fmt::Display for CausalPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatternParseError {
    #[error("response holds no object with a \"pattern\" key")]
    Missing,
    #[error("unknown causal pattern {0:?}")]
    Unknown(String),
}

impl FromStr for CausalPattern {
    type Err = PatternParseError;

    /// Trims and case-folds; anything starting with "coreference" (for
    /// instance "Coreference of X") is Coreference.
    fn from_str(value: &str) -> Result<Self, Self::Err> {
        let folded = value.trim().to_lowercase();
        if folded.starts_with("coreference") {
            return Ok(CausalPattern::Coreference);
        }
        CausalPattern::ALL
            .into_iter()
            .find(|p| p.as_str().to_lowercase() == folded)
            .ok_or_else(|| PatternParseError::Unknown(value.to_string()))
    }
}

/// Pattern named by the last JSON object in `response` that has a
/// "pattern" key.
pub fn parse_pattern(response: &str) -> Result<CausalPattern, PatternParseError> {
    last_field(response, "pattern")
        .ok_or(PatternParseError::Missing)?
        .parse()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    /// Labeled positives: the model must name a pattern.
    Positive,
    /// Queries: the model may answer "No".
    Inference,
}

/// Replaces `{text}`, `{source}` and `{target}` in one left-to-right pass so
/// braces inside substituted values are left alone.
pub(crate) fn fill(template: &str, text: &str, source: &str, target: &str) -> String {
    let mut out = String::with_capacity(template.len() + text.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        let value = [("{text}", text), ("{source}", source), ("{target}", target)]
            .into_iter()
            .find(|(key, _)| tail.starts_with(key));
        match value {
            Some((key, v)) => {
                out.push_str(v);
                rest = &tail[key.len()..];
            }
            None => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn build_extraction_prompt(sample: &Sample, mode: PromptMode) -> String {
    let template = match mode {
        PromptMode::Positive => POSITIVE_TEMPLATE,
        PromptMode::Inference => INFERENCE_TEMPLATE,
    };
    fill(
        template,
        &sample.context,
        &sample.source.surface,
        &sample.target.surface,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Llm,
    NegativeRule,
    Cache,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub pattern: CausalPattern,
    pub provenance: Provenance,
}

/// Sample id to assigned pattern, ordered by id.
pub type PatternAssignment = BTreeMap<String, Assignment>;

pub fn histogram(assignment: &PatternAssignment) -> BTreeMap<CausalPattern, usize> {
    let mut counts = BTreeMap::new();
    for a in assignment.values() {
        *counts.entry(a.pattern).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("corpus sample {0} has no gold label")]
    MissingLabel(String),
    #[error("pattern extraction for sample {id}: {source}")]
    Gateway {
        id: String,
        #[source]
        source: GatewayError,
    },
    #[error("pattern cache {path}: {message}")]
    Cache { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRecord {
    pub id: String,
    pub model: String,
    pub pattern: CausalPattern,
    pub provenance: Provenance,
    pub raw_response_digest: Option<String>,
}

/// Append-only JSONL of extracted patterns keyed by sample id and model.
pub struct PatternCache {
    records: Mutex<HashMap<(String, String), PatternRecord>>,
    file: Mutex<Option<File>>,
    path: String,
}

impl PatternCache {
    pub fn in_memory() -> Self {
        Self {
            records: Mutex::new(HashMap::new()),
            file: Mutex::new(None),
            path: String::new(),
        }
    }

    pub fn open(path: &Path) -> Result<Self, PatternError> {
        let shown = path.display().to_string();
        let err = |message: String| PatternError::Cache {
            path: shown.clone(),
            message,
        };
        let mut records = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
            for (idx, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let r: PatternRecord = serde_json::from_str(line)
                    .map_err(|e| err(format!("line {}: {e}", idx + 1)))?;
                records.insert((r.id.clone(), r.model.clone()), r);
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| err(e.to_string()))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| err(e.to_string()))?;
        Ok(Self {
            records: Mutex::new(records),
            file: Mutex::new(Some(file)),
            path: shown,
        })
    }

    pub fn get(&self, id: &str, model: &str) -> Option<PatternRecord> {
        self.records
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(&(id.to_string(), model.to_string()))
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn put(&self, record: PatternRecord) -> Result<(), PatternError> {
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(f) = file.as_mut() {
            let mut line = serde_json::to_string(&record).expect("record serializes");
            line.push('\n');
            f.write_all(line.as_bytes())
                .map_err(|e| PatternError::Cache {
                    path: self.path.clone(),
                    message: e.to_string(),
                })?;
        }
        self.records
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert((record.id.clone(), record.model.clone()), record);
        Ok(())
    }
}

fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Negatives get No without a model call. Positives are extracted with the
/// positive prompt, asked twice at most, and default to Direct.
pub fn assign_patterns(
    corpus: &[Sample],
    gateway: &Gateway,
    settings: &ModelSettings,
    cache: &PatternCache,
) -> Result<PatternAssignment, PatternError> {
    if let Some(s) = corpus.iter().find(|s| s.label.is_none()) {
        return Err(PatternError::MissingLabel(s.id.clone()));
    }
    let results: Vec<Result<(String, Assignment), PatternError>> = corpus
        .par_iter()
        .map(|sample| {
            if sample.label == Some(Label::No) {
                let a = Assignment {
                    pattern: CausalPattern::No,
                    provenance: Provenance::NegativeRule,
                };
                return Ok((sample.id.clone(), a));
            }
            if let Some(hit) = cache.get(&sample.id, &settings.model) {
                let a = Assignment {
                    pattern: hit.pattern,
                    provenance: Provenance::Cache,
                };
                return Ok((sample.id.clone(), a));
            }
            let request = settings.request(build_extraction_prompt(sample, PromptMode::Positive));
            let (parsed, response) = gateway
                .complete_parsed(&request, parse_pattern)
                .map_err(|source| PatternError::Gateway {
                    id: sample.id.clone(),
                    source,
                })?;
            let pattern = parsed.unwrap_or_else(|e| {
                log::warn!("sample {}: {e} after retry, using Direct", sample.id);
                CausalPattern::Direct
            });
            cache.put(PatternRecord {
                id: sample.id.clone(),
                model: settings.model.clone(),
                pattern,
                provenance: Provenance::Llm,
                raw_response_digest: Some(text_digest(&response.text)),
            })?;
            let a = Assignment {
                pattern,
                provenance: Provenance::Llm,
            };
            Ok((sample.id.clone(), a))
        })
        .collect();
    results.into_iter().collect()
}

/// Pattern of an unlabeled query via the inference prompt; No when the
/// model's answer cannot be parsed twice.
pub fn query_pattern(
    sample: &Sample,
    gateway: &Gateway,
    settings: &ModelSettings,
) -> Result<CausalPattern, GatewayError> {
    let request = settings.request(build_extraction_prompt(sample, PromptMode::Inference));
    let (parsed, _) = gateway.complete_parsed(&request, parse_pattern)?;
    Ok(parsed.unwrap_or_else(|e| {
        log::warn!("query {}: {e} after retry, using No", sample.id);
        CausalPattern::No
    }))
}
