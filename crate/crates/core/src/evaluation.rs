//! Precision, recall and F1 over Yes/No predictions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Label, Sample};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("prediction and gold ids differ; missing predictions: {missing:?}; unknown predictions: {extra:?}")]
    IdMismatch { missing: Vec<String>, extra: Vec<String> },
    #[error("gold sample {0} has no label")]
    Unlabeled(String),
    #[error("duplicate id {0}")]
    Duplicate(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn add(&mut self, gold: Label, predicted: Label) {
        match (gold, predicted) {
            (Label::Yes, Label::Yes) => self.tp += 1,
            (Label::No, Label::Yes) => self.fp += 1,
            (Label::Yes, Label::No) => self.fn_ += 1,
            (Label::No, Label::No) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SampleOutcome {
    pub id: String,
    pub gold: Label,
    pub predicted: Label,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub samples: Vec<SampleOutcome>,
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion, samples: Vec<SampleOutcome>) -> Self {
        let precision = confusion.precision();
        let recall = confusion.recall();
        Self {
            confusion,
            precision,
            recall,
            f1: f1_score(precision, recall),
            samples,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned plain-text summary with percentages to one decimal.
    pub fn table(&self) -> String {
        let c = &self.confusion;
        let mut out = String::new();
        let rows = [
            ("P", format!("{:.1}", self.precision * 100.0)),
            ("R", format!("{:.1}", self.recall * 100.0)),
            ("F1", format!("{:.1}", self.f1 * 100.0)),
            ("TP", c.tp.to_string()),
            ("FP", c.fp.to_string()),
            ("FN", c.fn_.to_string()),
            ("TN", c.tn.to_string()),
            ("N", c.total().to_string()),
        ];
        for (name, value) in rows {
            let _ = writeln!(out, "{name:<3}{value:>7}");
        }
        out
    }
}

/// `predictions` pairs sample ids with answers; the id sets must match the
/// gold samples exactly.
pub fn evaluate<'a, I>(predictions: I, gold: &[Sample]) -> Result<EvalReport, EvalError>
where
    I: IntoIterator<Item = (&'a str, Label)>,
{
    let mut gold_labels = BTreeMap::new();
    for s in gold {
        let label = s.label.ok_or_else(|| EvalError::Unlabeled(s.id.clone()))?;
        if gold_labels.insert(s.id.as_str(), label).is_some() {
            return Err(EvalError::Duplicate(s.id.clone()));
        }
    }
    let mut predicted = BTreeMap::new();
    for (id, answer) in predictions {
        if predicted.insert(id, answer).is_some() {
            return Err(EvalError::Duplicate(id.to_string()));
        }
    }
    let gold_ids: BTreeSet<&str> = gold_labels.keys().copied().collect();
    let pred_ids: BTreeSet<&str> = predicted.keys().copied().collect();
    if gold_ids != pred_ids {
        return Err(EvalError::IdMismatch {
            missing: gold_ids.difference(&pred_ids).map(|s| s.to_string()).collect(),
            extra: pred_ids.difference(&gold_ids).map(|s| s.to_string()).collect(),
        });
    }
    let mut confusion = Confusion::default();
    let samples = predicted
        .iter()
        .map(|(&id, &answer)| {
            let gold = gold_labels[id];
            confusion.add(gold, answer);
            SampleOutcome {
                id: id.to_string(),
                gold,
                predicted: answer,
                correct: gold == answer,
            }
        })
        .collect();
    Ok(EvalReport::from_confusion(confusion, samples))
}
