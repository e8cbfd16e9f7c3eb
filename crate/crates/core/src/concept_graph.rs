//! In-memory ConceptNet graph, embedding-based node matching and bounded
//! undirected shortest paths.
//!
//! Node ids are `/c/en/<term>` URIs with any part-of-speech or sense suffix
//! removed; ids are kept sorted so that index order equals lexicographic id
//! order, which is what every tie-break in this module relies on.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{normalize_key, EmbeddingStore, EventSpan};
use crate::path_metric::{ConceptPath, Direction, Hop};

/// Node matching threshold used when none is configured.
pub const DEFAULT_THRESHOLD: f64 = 0.6;
pub const DEFAULT_MAX_PATH_LEN: usize = 4;

const ENGLISH_PREFIX: &str = "/c/en/";

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("no embedding for event key {0:?}")]
    MissingEmbedding(String),
    #[error("graph snapshot {path}: {message}")]
    Snapshot { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationEdge {
    pub relation: String,
    pub start: String,
    pub end: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeMatch {
    pub node: String,
    pub similarity: f64,
}

/// Row counts from one dump ingestion.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub rows: usize,
    pub kept: usize,
    pub skipped_language: usize,
    pub skipped_malformed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Incidence {
    neighbor: u32,
    edge: u32,
    direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Edge {
    relation: u32,
    start: u32,
    end: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptGraph {
    ids: Vec<String>,
    labels: Vec<String>,
    index: HashMap<String, u32>,
    relations: Vec<String>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<Incidence>>,
}

impl ConceptGraph {
    /// Builds a graph from `(relation, start id, end id)` triples; ids are
    /// used verbatim and labels derived from their final segment.
    pub fn from_edges<I, S>(edges: I) -> Self
    where
        I: IntoIterator<Item = (S, S, S)>,
        S: AsRef<str>,
    {
        let triples: Vec<(String, String, String)> = edges
            .into_iter()
            .map(|(r, s, e)| (r.as_ref().to_string(), s.as_ref().to_string(), e.as_ref().to_string()))
            .collect();
        let mut ids: Vec<String> = triples
            .iter()
            .flat_map(|(_, s, e)| [s.clone(), e.clone()])
            .collect();
        ids.sort();
        ids.dedup();
        let index: HashMap<String, u32> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        let mut relations: Vec<String> = triples.iter().map(|(r, _, _)| r.clone()).collect();
        relations.sort();
        relations.dedup();
        let edges = triples
            .iter()
            .map(|(r, s, e)| Edge {
                relation: relations.binary_search(r).expect("relation interned") as u32,
                start: index[s],
                end: index[e],
            })
            .collect();
        Self::assemble(ids, relations, edges)
    }

    fn assemble(ids: Vec<String>, relations: Vec<String>, edges: Vec<Edge>) -> Self {
        let labels = ids.iter().map(|id| label_of(id)).collect();
        let index = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();
        let mut adjacency: Vec<Vec<Incidence>> = vec![Vec::new(); ids.len()];
        for (i, e) in edges.iter().enumerate() {
            if e.start == e.end {
                continue;
            }
            adjacency[e.start as usize].push(Incidence {
                neighbor: e.end,
                edge: i as u32,
                direction: Direction::Forward,
            });
            adjacency[e.end as usize].push(Incidence {
                neighbor: e.start,
                edge: i as u32,
                direction: Direction::Inverse,
            });
        }
        for list in &mut adjacency {
            list.sort_by(|a, b| {
                a.neighbor
                    .cmp(&b.neighbor)
                    .then_with(|| relations[edges[a.edge as usize].relation as usize]
                        .cmp(&relations[edges[b.edge as usize].relation as usize]))
                    .then(a.direction.cmp(&b.direction))
                    .then(a.edge.cmp(&b.edge))
            });
        }
        Self {
            ids,
            labels,
            index,
            relations,
            edges,
            adjacency,
        }
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    pub fn label(&self, id: &str) -> Option<&str> {
        self.index.get(id).map(|&i| self.labels[i as usize].as_str())
    }

    pub fn edges(&self) -> impl Iterator<Item = RelationEdge> + '_ {
        self.edges.iter().map(|e| RelationEdge {
            relation: self.relations[e.relation as usize].clone(),
            start: self.ids[e.start as usize].clone(),
            end: self.ids[e.end as usize].clone(),
        })
    }

    /// Ids of nodes adjacent to `id` through any edge, in either direction.
    pub fn neighbors(&self, id: &str) -> Vec<&str> {
        let Some(&i) = self.index.get(id) else {
            return Vec::new();
        };
        let mut out: Vec<&str> = self.adjacency[i as usize]
            .iter()
            .map(|inc| self.ids[inc.neighbor as usize].as_str())
            .collect();
        out.dedup();
        out
    }

    fn id_index(&self, id: &str) -> Result<u32, GraphError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownNode(id.to_string()))
    }
}

/// Human-readable label: final URI segment with underscores as spaces.
fn label_of(id: &str) -> String {
    id.rsplit('/').next().unwrap_or(id).replace('_', " ")
}

/// Reduces `/c/en/<term>[/pos[/...]]` to `/c/en/<term>`; `None` for
/// non-English or malformed concept URIs.
fn english_node(uri: &str) -> Option<String> {
    let rest = uri.trim().strip_prefix(ENGLISH_PREFIX)?;
    let term = rest.split('/').next()?;
    if term.is_empty() {
        return None;
    }
    Some(format!("{ENGLISH_PREFIX}{term}"))
}

fn relation_name(uri: &str) -> Option<&str> {
    let uri = uri.trim();
    let name = match uri.strip_prefix("/r/") {
        Some(rest) => rest.split('/').next()?,
        None => uri,
    };
    (!name.is_empty()).then_some(name)
}

/// Parses a ConceptNet assertion dump: tab-separated assertion URI,
/// relation, start, end and metadata. Rows whose endpoints are not both
/// English are dropped; rows with fewer than five columns are counted and
/// skipped.
pub fn parse_dump(text: &str) -> (ConceptGraph, BuildStats) {
    let mut stats = BuildStats::default();
    let mut triples = Vec::new();
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        stats.rows += 1;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 5 {
            stats.skipped_malformed += 1;
            continue;
        }
        let Some(relation) = relation_name(cols[1]) else {
            stats.skipped_malformed += 1;
            continue;
        };
        match (english_node(cols[2]), english_node(cols[3])) {
            (Some(start), Some(end)) => {
                stats.kept += 1;
                triples.push((relation.to_string(), start, end));
            }
            _ => stats.skipped_language += 1,
        }
    }
    if stats.skipped_malformed > 0 {
        log::warn!("skipped {} malformed dump rows", stats.skipped_malformed);
    }
    (ConceptGraph::from_edges(triples), stats)
}

pub fn build_graph(assertions: &Path) -> Result<(ConceptGraph, BuildStats), GraphError> {
    let text = fs::read_to_string(assertions).map_err(|source| GraphError::Io {
        path: assertions.display().to_string(),
        source,
    })?;
    Ok(parse_dump(&text))
}

/// Hex SHA-256 of a dump's bytes, the snapshot cache key.
pub fn dump_checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    checksum: String,
    ids: Vec<String>,
    relations: Vec<String>,
    edges: Vec<Edge>,
    stats: (usize, usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotStatus {
    Hit,
    Rebuilt,
}

/// Loads the graph from `snapshot` when it was built from a dump with the
/// same checksum, otherwise builds it fresh and rewrites the snapshot.
pub fn load_or_build(
    dump: &Path,
    snapshot: &Path,
) -> Result<(ConceptGraph, BuildStats, SnapshotStatus), GraphError> {
    let bytes = fs::read(dump).map_err(|source| GraphError::Io {
        path: dump.display().to_string(),
        source,
    })?;
    let checksum = dump_checksum(&bytes);
    if let Ok(text) = fs::read_to_string(snapshot) {
        if let Ok(snap) = serde_json::from_str::<Snapshot>(&text) {
            if snap.checksum == checksum {
                if let Some(graph) = restore(snap.ids, snap.relations, snap.edges) {
                    let (rows, kept, skipped_language, skipped_malformed) = snap.stats;
                    let stats = BuildStats {
                        rows,
                        kept,
                        skipped_language,
                        skipped_malformed,
                    };
                    return Ok((graph, stats, SnapshotStatus::Hit));
                }
            }
        }
    }
    let text = String::from_utf8_lossy(&bytes);
    let (graph, stats) = parse_dump(&text);
    let snap = Snapshot {
        checksum,
        ids: graph.ids.clone(),
        relations: graph.relations.clone(),
        edges: graph.edges.clone(),
        stats: (stats.rows, stats.kept, stats.skipped_language, stats.skipped_malformed),
    };
    let json = serde_json::to_string(&snap).map_err(|e| GraphError::Snapshot {
        path: snapshot.display().to_string(),
        message: e.to_string(),
    })?;
    crate::write_atomic(snapshot, json.as_bytes()).map_err(|source| GraphError::Io {
        path: snapshot.display().to_string(),
        source,
    })?;
    Ok((graph, stats, SnapshotStatus::Rebuilt))
}

fn restore(ids: Vec<String>, relations: Vec<String>, edges: Vec<Edge>) -> Option<ConceptGraph> {
    let sorted = ids.windows(2).all(|w| w[0] < w[1]);
    let in_range = edges.iter().all(|e| {
        (e.start as usize) < ids.len()
            && (e.end as usize) < ids.len()
            && (e.relation as usize) < relations.len()
    });
    (sorted && in_range).then(|| ConceptGraph::assemble(ids, relations, edges))
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Node vectors gathered once for repeated event matching. Nodes without an
/// embedding under their lowercased label are never matched.
pub struct NodeMatcher<'a> {
    graph: &'a ConceptGraph,
    embeddings: &'a EmbeddingStore,
    nodes: Vec<(u32, &'a [f64])>,
}

impl<'a> NodeMatcher<'a> {
    pub fn new(graph: &'a ConceptGraph, embeddings: &'a EmbeddingStore) -> Self {
        let nodes = graph
            .labels
            .iter()
            .enumerate()
            .filter_map(|(i, label)| embeddings.get(&normalize_key(label)).map(|v| (i as u32, v)))
            .collect();
        Self {
            graph,
            embeddings,
            nodes,
        }
    }

    /// Best node by cosine similarity if it reaches `threshold`; equal
    /// similarities resolve to the smallest node id.
    pub fn best_match(&self, event: &EventSpan, threshold: f64) -> Result<Option<NodeMatch>, GraphError> {
        let key = event.embedding_key();
        let query = self
            .embeddings
            .get(&key)
            .ok_or(GraphError::MissingEmbedding(key))?;
        let mut best: Option<(u32, f64)> = None;
        for &(node, vector) in &self.nodes {
            let Some(sim) = cosine(query, vector) else {
                continue;
            };
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((node, sim));
            }
        }
        Ok(best
            .filter(|&(_, sim)| sim >= threshold)
            .map(|(node, similarity)| NodeMatch {
                node: self.graph.ids[node as usize].clone(),
                similarity,
            }))
    }
}

pub fn match_node(
    event: &EventSpan,
    embeddings: &EmbeddingStore,
    graph: &ConceptGraph,
    threshold: f64,
) -> Result<Option<NodeMatch>, GraphError> {
    NodeMatcher::new(graph, embeddings).best_match(event, threshold)
}

/// Minimum-hop path from `a` to `b` treating every edge as undirected, at
/// most `max_len` hops. Neighbors are expanded in ascending id order, so the
/// returned path is the lexicographically smallest shortest path.
pub fn shortest_path(
    graph: &ConceptGraph,
    a: &str,
    b: &str,
    max_len: usize,
) -> Result<Option<ConceptPath>, GraphError> {
    let start = graph.id_index(a)?;
    let goal = graph.id_index(b)?;
    Ok(bfs(graph, start, goal, max_len))
}

fn bfs(graph: &ConceptGraph, start: u32, goal: u32, max_len: usize) -> Option<ConceptPath> {
    // visited node -> (predecessor, incidence used to reach it from there)
    let mut parent: HashMap<u32, Option<(u32, Incidence)>> = HashMap::new();
    parent.insert(start, None);
    let mut queue = VecDeque::from([(start, 0usize)]);
    let mut found = start == goal;
    while !found {
        let Some((node, depth)) = queue.pop_front() else {
            break;
        };
        if depth == max_len {
            continue;
        }
        for inc in &graph.adjacency[node as usize] {
            if parent.contains_key(&inc.neighbor) {
                continue;
            }
            parent.insert(inc.neighbor, Some((node, *inc)));
            if inc.neighbor == goal {
                found = true;
                break;
            }
            queue.push_back((inc.neighbor, depth + 1));
        }
    }
    if !found {
        return None;
    }

    let mut steps = Vec::new();
    let mut cur = goal;
    while let Some(Some((prev, inc))) = parent.get(&cur) {
        steps.push(*inc);
        cur = *prev;
    }
    steps.reverse();
    let hops = steps
        .into_iter()
        .map(|inc| Hop {
            relation: graph.relations[graph.edges[inc.edge as usize].relation as usize].clone(),
            direction: inc.direction,
            next_label: graph.labels[inc.neighbor as usize].clone(),
        })
        .collect();
    Some(ConceptPath {
        start_label: graph.labels[start as usize].clone(),
        hops,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path_metric::{serialize_path, RelationTemplates};

    fn row(rel: &str, s: &str, e: &str) -> String {
        format!("/a/[{rel},{s},{e}]\t/r/{rel}\t{s}\t{e}\t{{\"weight\": 1.0}}")
    }

    #[test]
    fn three_rows_four_nodes() {
        let dump = [
            row("Causes", "/c/en/fire", "/c/en/damage"),
            row("IsA", "/c/en/fire/n", "/c/en/event"),
            row("HasA", "/c/en/damage", "/c/en/roof/n/wn/artifact"),
        ]
        .join("\n");
        let (g, stats) = parse_dump(&dump);
        assert_eq!((g.node_count(), g.edge_count()), (4, 3));
        assert_eq!(stats.kept, 3);
        let edges: Vec<_> = g.edges().collect();
        assert_eq!(
            edges[0],
            RelationEdge {
                relation: "Causes".into(),
                start: "/c/en/fire".into(),
                end: "/c/en/damage".into()
            }
        );
        assert_eq!(g.label("/c/en/roof"), Some("roof"));
    }

    #[test]
    fn language_filter_and_short_rows() {
        let dump = [
            row("Causes", "/c/en/fire", "/c/en/smoke"),
            row("Causes", "/c/fr/feu", "/c/fr/fumée"),
            row("Synonym", "/c/en/fire", "/c/fr/feu"),
            "/a/x\t/r/Causes\t/c/en/a".to_string(),
            row("RelatedTo", "/c/en/ice_cream", "/c/en/cold"),
        ]
        .join("\n");
        let (g, stats) = parse_dump(&dump);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(stats.skipped_language, 2);
        assert_eq!(stats.skipped_malformed, 1);
        assert_eq!(g.label("/c/en/ice_cream"), Some("ice cream"));
        assert!(!g.contains("/c/fr/feu"));
    }

    #[test]
    fn dbpedia_relation_name() {
        let (g, _) = parse_dump(&row("dbpedia/genre", "/c/en/jazz", "/c/en/music"));
        assert_eq!(g.edges().next().unwrap().relation, "dbpedia");
    }

    fn small() -> ConceptGraph {
        ConceptGraph::from_edges([
            ("HasA", "/c/en/a", "/c/en/b"),
            ("Causes", "/c/en/c", "/c/en/b"),
        ])
    }

    #[test]
    fn worked_example_path() {
        let g = small();
        let p = shortest_path(&g, "/c/en/a", "/c/en/c", 4).unwrap().unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.hops[0].direction, Direction::Forward);
        assert_eq!(p.hops[1].direction, Direction::Inverse);
        assert_eq!(
            serialize_path(&p, &RelationTemplates::default()),
            r#""a" has a "b", and "b" is caused by "c"."#
        );
    }

    #[test]
    fn zero_hop_and_bounds() {
        let g = small();
        let p = shortest_path(&g, "/c/en/b", "/c/en/b", 0).unwrap().unwrap();
        assert!(p.is_empty());
        assert!(shortest_path(&g, "/c/en/a", "/c/en/c", 1).unwrap().is_none());
        assert!(matches!(
            shortest_path(&g, "/c/en/a", "/c/en/zzz", 4),
            Err(GraphError::UnknownNode(_))
        ));
    }

    #[test]
    fn chain_beyond_bound() {
        let ids: Vec<String> = (0..6).map(|i| format!("/c/en/n{i}")).collect();
        let g = ConceptGraph::from_edges((0..5).map(|i| ("RelatedTo", ids[i].as_str(), ids[i + 1].as_str())));
        assert!(shortest_path(&g, &ids[0], &ids[5], 4).unwrap().is_none());
        assert_eq!(shortest_path(&g, &ids[0], &ids[5], 5).unwrap().unwrap().len(), 5);
    }

    #[test]
    fn lexicographic_tie_break() {
        // two 2-hop routes s-x-t and s-m-t; m < x
        let g = ConceptGraph::from_edges([
            ("RelatedTo", "/c/en/s", "/c/en/x"),
            ("RelatedTo", "/c/en/x", "/c/en/t"),
            ("RelatedTo", "/c/en/s", "/c/en/m"),
            ("RelatedTo", "/c/en/m", "/c/en/t"),
        ]);
        let p = shortest_path(&g, "/c/en/s", "/c/en/t", 4).unwrap().unwrap();
        assert_eq!(p.hops[0].next_label, "m");
    }

    fn store(entries: &[(&str, &[f64])]) -> EmbeddingStore {
        EmbeddingStore::from_entries(entries.iter().map(|(k, v)| (k.to_string(), v.to_vec()))).unwrap()
    }

    #[test]
    fn matching_rules() {
        let g = ConceptGraph::from_edges([
            ("RelatedTo", "/c/en/fire", "/c/en/water"),
            ("RelatedTo", "/c/en/apple", "/c/en/banana"),
        ]);
        let emb = store(&[
            ("fire", &[1.0, 0.0, 0.0, 0.0]),
            ("water", &[0.0, 1.0, 0.0, 0.0]),
            ("apple", &[0.0, 0.435_889_894_354_067_4, 0.0, 0.9]),
            ("banana", &[0.0, 0.0, 0.435_889_894_354_067_4, 0.9]),
            ("blaze", &[2.0, 0.0, 0.0, 0.0]),
            ("void", &[0.0, 0.0, 1.0, -0.1]),
            ("fruit", &[0.0, 0.0, 0.0, 1.0]),
        ]);
        let ev = |s: &str| EventSpan::new(s, 0, s.chars().count());
        let m = match_node(&ev("blaze"), &emb, &g, 0.6).unwrap().unwrap();
        assert_eq!(m.node, "/c/en/fire");
        assert!((m.similarity - 1.0).abs() < 1e-12);
        assert!(match_node(&ev("void"), &emb, &g, 0.6).unwrap().is_none());
        let m = match_node(&ev("Fruit"), &emb, &g, 0.6).unwrap().unwrap();
        assert_eq!(m.node, "/c/en/apple");
        assert!((m.similarity - 0.9).abs() < 1e-12);
        assert!(match_node(&ev("Fruit"), &emb, &g, 0.95).unwrap().is_none());
        assert!(matches!(
            match_node(&ev("unseen"), &emb, &g, 0.6),
            Err(GraphError::MissingEmbedding(k)) if k == "unseen"
        ));
    }

    #[test]
    fn snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dump = dir.path().join("dump.csv");
        let snap = dir.path().join("graph.json");
        fs::write(&dump, [row("Causes", "/c/en/fire", "/c/en/damage"), row("HasA", "/c/en/a", "/c/en/b")].join("\n")).unwrap();
        let (fresh, _, status) = load_or_build(&dump, &snap).unwrap();
        assert_eq!(status, SnapshotStatus::Rebuilt);
        let (cached, stats, status) = load_or_build(&dump, &snap).unwrap();
        assert_eq!(status, SnapshotStatus::Hit);
        assert_eq!(stats.kept, 2);
        assert_eq!(cached, fresh);
        fs::write(&dump, row("Causes", "/c/en/x", "/c/en/y")).unwrap();
        let (_, _, status) = load_or_build(&dump, &snap).unwrap();
        assert_eq!(status, SnapshotStatus::Rebuilt);
    }
}
