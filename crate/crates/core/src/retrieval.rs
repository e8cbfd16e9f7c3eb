//! Joint structural scoring of corpus candidates against a query and the
//! balanced, pattern-filtered top-k selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::concept_graph::{self, ConceptGraph, GraphError, NodeMatcher};
use crate::corpus::{EmbeddingStore, Label, ParseStore, Sample};
use crate::path_metric::{self, ConceptPath, PathNormalization, RelationTemplates};
use crate::pattern::{CausalPattern, PatternAssignment};
use crate::syntax_metric::{similarity_from_distance, LabelWeights, PreparedTree};

pub const RETRIEVER_NAME: &str = "structural";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub w1: f64,
    pub w2: f64,
    pub threshold: f64,
    pub k_top: usize,
    pub max_path_len: usize,
    pub path_normalization: PathNormalization,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            w1: 0.5,
            w2: 0.5,
            threshold: concept_graph::DEFAULT_THRESHOLD,
            k_top: 2,
            max_path_len: concept_graph::DEFAULT_MAX_PATH_LEN,
            path_normalization: PathNormalization::Characters,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<(), RetrievalError> {
        let bad = |m: String| Err(RetrievalError::Config(m));
        if !(self.w1.is_finite() && self.w2.is_finite()) || self.w1 < 0.0 || self.w2 < 0.0 {
            return bad(format!("weights must be finite and non-negative, got w1={} w2={}", self.w1, self.w2));
        }
        if self.w1 + self.w2 <= 0.0 {
            return bad("w1 + w2 must be positive".into());
        }
        if self.k_top == 0 {
            return bad("k_top must be at least 1".into());
        }
        if !self.threshold.is_finite() {
            return bad(format!("threshold {} is not finite", self.threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("retrieval config: {0}")]
    Config(String),
    #[error("no parse tree for sample {0}")]
    MissingParse(String),
    #[error("no pattern assigned to corpus sample {0}")]
    MissingPattern(String),
    #[error("corpus sample {0} has no gold label")]
    MissingLabel(String),
    #[error("sample {id}: {source}")]
    Graph {
        id: String,
        #[source]
        source: GraphError,
    },
    #[error("candidate corpus is empty")]
    EmptyCorpus,
}

/// Read-only stores shared by every query.
#[derive(Clone, Copy)]
pub struct Resources<'a> {
    pub graph: &'a ConceptGraph,
    pub embeddings: &'a EmbeddingStore,
    pub parses: &'a ParseStore,
    pub templates: &'a RelationTemplates,
    pub weights: &'a LabelWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredCandidate {
    pub id: String,
    pub label: Label,
    pub pattern: CausalPattern,
    pub s_path: f64,
    pub s_syn: f64,
    pub score: f64,
    /// Position of the sample in the corpus slice the index was built from.
    #[serde(skip)]
    pub index: usize,
}

struct Structure {
    path: Option<ConceptPath>,
    serialized: Option<String>,
    tree: PreparedTree,
}

/// Per-sample paths and flattened trees, computed once for the corpus.
pub struct CorpusIndex<'a> {
    corpus: &'a [Sample],
    entries: Vec<Structure>,
    patterns: Vec<CausalPattern>,
    labels: Vec<Label>,
}

fn structure(sample: &Sample, res: &Resources<'_>, matcher: &NodeMatcher<'_>, cfg: &RetrievalConfig) -> Result<Structure, RetrievalError> {
    let graph_err = |source| RetrievalError::Graph {
        id: sample.id.clone(),
        source,
    };
    let tree = res
        .parses
        .get(&sample.id)
        .ok_or_else(|| RetrievalError::MissingParse(sample.id.clone()))?;
    let a = matcher.best_match(&sample.source, cfg.threshold).map_err(graph_err)?;
    let b = matcher.best_match(&sample.target, cfg.threshold).map_err(graph_err)?;
    let path = match (a, b) {
        (Some(a), Some(b)) => {
            concept_graph::shortest_path(res.graph, &a.node, &b.node, cfg.max_path_len).map_err(graph_err)?
        }
        _ => None,
    };
    let serialized = path.as_ref().map(|p| path_metric::serialize_path(p, res.templates));
    Ok(Structure {
        path,
        serialized,
        tree: PreparedTree::new(tree, res.weights),
    })
}

impl<'a> CorpusIndex<'a> {
    pub fn build(
        corpus: &'a [Sample],
        assignment: &PatternAssignment,
        res: &Resources<'_>,
        cfg: &RetrievalConfig,
    ) -> Result<Self, RetrievalError> {
        cfg.validate()?;
        let mut patterns = Vec::with_capacity(corpus.len());
        let mut labels = Vec::with_capacity(corpus.len());
        for s in corpus {
            let a = assignment
                .get(&s.id)
                .ok_or_else(|| RetrievalError::MissingPattern(s.id.clone()))?;
            patterns.push(a.pattern);
            labels.push(s.label.ok_or_else(|| RetrievalError::MissingLabel(s.id.clone()))?);
        }
        let matcher = NodeMatcher::new(res.graph, res.embeddings);
        let entries = corpus
            .par_iter()
            .map(|s| structure(s, res, &matcher, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            corpus,
            entries,
            patterns,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.corpus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corpus.is_empty()
    }

    pub fn sample(&self, index: usize) -> &Sample {
        &self.corpus[index]
    }

    /// Serialized concept path of corpus sample `index`, if one was found.
    pub fn serialized_path(&self, index: usize) -> Option<&str> {
        self.entries[index].serialized.as_deref()
    }
}

/// A query's own path and tree, prepared against the same resources.
pub struct QueryStructure {
    structure: Structure,
}

impl QueryStructure {
    pub fn new(query: &Sample, res: &Resources<'_>, cfg: &RetrievalConfig) -> Result<Self, RetrievalError> {
        let matcher = NodeMatcher::new(res.graph, res.embeddings);
        Ok(Self {
            structure: structure(query, res, &matcher, cfg)?,
        })
    }

    pub fn serialized_path(&self) -> Option<&str> {
        self.structure.serialized.as_deref()
    }
}

fn path_score(q: &Structure, c: &Structure, res: &Resources<'_>, mode: PathNormalization) -> f64 {
    match mode {
        PathNormalization::Characters => match (&q.serialized, &c.serialized) {
            (Some(a), Some(b)) => path_metric::normalized_similarity(a, b),
            _ => 0.0,
        },
        PathNormalization::Hops => {
            path_metric::path_similarity_with(q.path.as_ref(), c.path.as_ref(), res.templates, mode)
        }
    }
}

/// Scores every corpus sample except the query itself, sorted by score
/// descending with ties broken by ascending id.
pub fn score_candidates(
    query: &Sample,
    query_structure: &QueryStructure,
    index: &CorpusIndex<'_>,
    res: &Resources<'_>,
    cfg: &RetrievalConfig,
) -> Vec<ScoredCandidate> {
    let q = &query_structure.structure;
    let mut scored: Vec<ScoredCandidate> = (0..index.len())
        .into_par_iter()
        .filter(|&i| index.corpus[i].id != query.id)
        .map(|i| {
            let c = &index.entries[i];
            let s_path = path_score(q, c, res, cfg.path_normalization);
            let s_syn = similarity_from_distance(q.tree.distance(&c.tree));
            ScoredCandidate {
                id: index.corpus[i].id.clone(),
                label: index.labels[i],
                pattern: index.patterns[i],
                s_path,
                s_syn,
                score: cfg.w1 * s_path + cfg.w2 * s_syn,
                index: i,
            }
        })
        .collect();
    sort_candidates(&mut scored);
    scored
}

pub fn sort_candidates(scored: &mut [ScoredCandidate]) {
    scored.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackFlags {
    /// One class was under quota and the other filled the gap.
    pub backfill: bool,
    /// No candidate shared the query pattern; the whole list was used.
    pub unfiltered: bool,
    /// Fewer than k_top examples were available.
    pub shortfall: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExampleSet {
    pub examples: Vec<ScoredCandidate>,
    pub fallback: FallbackFlags,
    pub notes: Vec<String>,
}

impl ExampleSet {
    pub fn ids(&self) -> Vec<String> {
        self.examples.iter().map(|c| c.id.clone()).collect()
    }
}

/// Positives then negatives, each in list order, with quotas
/// floor(k/2) and k - floor(k/2). `scored` must already be sorted.
pub fn select_examples(
    query_pattern: CausalPattern,
    scored: &[ScoredCandidate],
    k_top: usize,
) -> Result<ExampleSet, RetrievalError> {
    if scored.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let mut flags = FallbackFlags::default();
    let mut notes = Vec::new();
    let matched: Vec<&ScoredCandidate> = scored.iter().filter(|c| c.pattern == query_pattern).collect();
    let pool: Vec<&ScoredCandidate> = if matched.is_empty() {
        flags.unfiltered = true;
        notes.push(format!("no candidate has pattern {query_pattern}; selecting from all candidates"));
        scored.iter().collect()
    } else {
        matched
    };
    let pos: Vec<&ScoredCandidate> = pool.iter().copied().filter(|c| c.label == Label::Yes).collect();
    let neg: Vec<&ScoredCandidate> = pool.iter().copied().filter(|c| c.label == Label::No).collect();
    let k_pos = k_top / 2;
    let k_neg = k_top - k_pos;
    let mut take_pos = k_pos.min(pos.len());
    let mut take_neg = k_neg.min(neg.len());
    let short = k_top - take_pos - take_neg;
    if short > 0 {
        let extra_pos = short.min(pos.len() - take_pos);
        let extra_neg = (short - extra_pos).min(neg.len() - take_neg);
        if extra_pos > 0 {
            notes.push(format!("{extra_pos} positive(s) backfilled for missing negatives"));
        }
        if extra_neg > 0 {
            notes.push(format!("{extra_neg} negative(s) backfilled for missing positives"));
        }
        flags.backfill = extra_pos + extra_neg > 0;
        take_pos += extra_pos;
        take_neg += extra_neg;
    }
    let total = take_pos + take_neg;
    if total < k_top {
        flags.shortfall = true;
        notes.push(format!("only {total} of {k_top} examples available"));
    }
    for note in &notes {
        log::info!("selection: {note}");
    }
    let examples = pos[..take_pos]
        .iter()
        .chain(&neg[..take_neg])
        .map(|c| (*c).clone())
        .collect();
    Ok(ExampleSet {
        examples,
        fallback: flags,
        notes,
    })
}

/// Everything recorded about one query's retrieval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retrieval {
    pub query_id: String,
    pub query_pattern: CausalPattern,
    pub query_path: Option<String>,
    pub candidates: Vec<ScoredCandidate>,
    pub selection: ExampleSet,
}

pub fn retrieve(
    query: &Sample,
    query_pattern: CausalPattern,
    index: &CorpusIndex<'_>,
    res: &Resources<'_>,
    cfg: &RetrievalConfig,
) -> Result<Retrieval, RetrievalError> {
    let qs = QueryStructure::new(query, res, cfg)?;
    let candidates = score_candidates(query, &qs, index, res, cfg);
    let selection = select_examples(query_pattern, &candidates, cfg.k_top)?;
    Ok(Retrieval {
        query_id: query.id.clone(),
        query_pattern,
        query_path: qs.serialized_path().map(str::to_string),
        candidates,
        selection,
    })
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    query_id: &'a str,
    retriever: &'a str,
    query_pattern: CausalPattern,
    query_path: Option<&'a str>,
    k_top: usize,
    candidates: &'a [ScoredCandidate],
    selected: Vec<String>,
    fallback: FallbackFlags,
    notes: &'a [String],
}

impl Retrieval {
    /// One JSONL trace line, without the trailing newline.
    pub fn trace_line(&self, k_top: usize) -> String {
        serde_json::to_string(&TraceRecord {
            query_id: &self.query_id,
            retriever: RETRIEVER_NAME,
            query_pattern: self.query_pattern,
            query_path: self.query_path.as_deref(),
            k_top,
            candidates: &self.candidates,
            selected: self.selection.ids(),
            fallback: self.selection.fallback,
            notes: &self.selection.notes,
        })
        .expect("trace record serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: &str, label: Label, pattern: CausalPattern, score: f64) -> ScoredCandidate {
        ScoredCandidate {
            id: id.into(),
            label,
            pattern,
            s_path: 0.0,
            s_syn: 0.0,
            score,
            index: 0,
        }
    }

    #[test]
    fn config_validation() {
        assert!(RetrievalConfig::default().validate().is_ok());
        let bad = [
            RetrievalConfig { w1: -0.1, ..Default::default() },
            RetrievalConfig { w1: 0.0, w2: 0.0, ..Default::default() },
            RetrievalConfig { k_top: 0, ..Default::default() },
            RetrievalConfig { w2: f64::NAN, ..Default::default() },
        ];
        assert!(bad.iter().all(|c| c.validate().is_err()));
    }

    #[test]
    fn chain_backfills_from_positives() {
        use CausalPattern::*;
        let scored = vec![
            cand("p1", Label::Yes, Chain, 0.9),
            cand("n1", Label::No, No, 0.8),
            cand("p2", Label::Yes, Chain, 0.7),
            cand("p3", Label::Yes, Direct, 0.6),
        ];
        let e = select_examples(Chain, &scored, 2).unwrap();
        assert_eq!(e.ids(), ["p1", "p2"]);
        assert!(e.fallback.backfill && !e.fallback.unfiltered && !e.fallback.shortfall);
    }

    #[test]
    fn empty_filter_falls_back_to_global() {
        use CausalPattern::*;
        let scored = vec![
            cand("p1", Label::Yes, Direct, 0.8),
            cand("p2", Label::Yes, Direct, 0.7),
            cand("n1", Label::No, No, 0.6),
        ];
        let e = select_examples(Collider, &scored, 2).unwrap();
        assert_eq!(e.ids(), ["p1", "n1"]);
        assert!(e.fallback.unfiltered && !e.fallback.backfill);
    }

    #[test]
    fn shortfall_and_oversized_k() {
        use CausalPattern::*;
        let scored = vec![cand("p1", Label::Yes, Chain, 0.9), cand("n1", Label::No, No, 0.5)];
        let e = select_examples(Chain, &scored, 2).unwrap();
        assert_eq!(e.ids(), ["p1"]);
        assert!(e.fallback.shortfall);
        let e = select_examples(No, &scored, 10).unwrap();
        assert_eq!(e.ids(), ["n1"]);
        assert!(e.fallback.shortfall);
        assert!(matches!(select_examples(No, &[], 2), Err(RetrievalError::EmptyCorpus)));
    }

    #[test]
    fn quota_split() {
        use CausalPattern::*;
        let scored = vec![
            cand("a", Label::Yes, Direct, 0.9),
            cand("b", Label::No, Direct, 0.8),
            cand("c", Label::Yes, Direct, 0.7),
            cand("d", Label::No, Direct, 0.6),
            cand("e", Label::No, Direct, 0.5),
        ];
        let ids = |k| select_examples(Direct, &scored, k).unwrap().ids();
        assert_eq!(ids(1), ["b"]);
        assert_eq!(ids(2), ["a", "b"]);
        assert_eq!(ids(3), ["a", "b", "d"]);
        assert_eq!(ids(4), ["a", "c", "b", "d"]);
    }

    #[test]
    fn sort_ties_by_id() {
        let mut v = vec![
            cand("b", Label::Yes, CausalPattern::No, 0.5),
            cand("a", Label::Yes, CausalPattern::No, 0.5),
            cand("c", Label::Yes, CausalPattern::No, 0.9),
        ];
        sort_candidates(&mut v);
        let ids: Vec<_> = v.iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }
}
