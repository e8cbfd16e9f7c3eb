//! Concept path serialization and the edit-distance path similarity.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DEFAULT_TEMPLATES: &str = include_str!("../data/relation_templates.tsv");
const FALLBACK_RELATION: &str = "RelatedTo";
const FALLBACK_PHRASE: &str = "is related to";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("relation templates line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Direction in which a hop walks its stored edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub relation: String,
    pub direction: Direction,
    pub next_label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptPath {
    pub start_label: String,
    pub hops: Vec<Hop>,
}

impl ConceptPath {
    pub fn new(start_label: impl Into<String>) -> Self {
        Self {
            start_label: start_label.into(),
            hops: Vec::new(),
        }
    }

    pub fn hop(mut self, relation: &str, direction: Direction, next_label: &str) -> Self {
        self.hops.push(Hop {
            relation: relation.to_string(),
            direction,
            next_label: next_label.to_string(),
        });
        self
    }

    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn end_label(&self) -> &str {
        self.hops
            .last()
            .map(|h| h.next_label.as_str())
            .unwrap_or(&self.start_label)
    }
}

/// Forward and inverse phrase for each relation name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTemplates {
    map: BTreeMap<String, (String, String)>,
}

impl Default for RelationTemplates {
    fn default() -> Self {
        Self::from_tsv(DEFAULT_TEMPLATES).expect("bundled relation templates are valid")
    }
}

impl RelationTemplates {
    /// `relation<TAB>forward<TAB>inverse` per line; `#` comments ignored.
    pub fn from_tsv(text: &str) -> Result<Self, TemplateError> {
        let mut map = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| TemplateError::Malformed {
                line: idx + 1,
                message: message.to_string(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(err("expected relation<TAB>forward<TAB>inverse"));
            }
            let (rel, fwd, inv) = (cols[0].trim(), cols[1].trim(), cols[2].trim());
            if rel.is_empty() || fwd.is_empty() || inv.is_empty() {
                return Err(err("empty column"));
            }
            if map
                .insert(rel.to_string(), (fwd.to_string(), inv.to_string()))
                .is_some()
            {
                return Err(err("duplicate relation"));
            }
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = fs::read_to_string(path).map_err(|source| TemplateError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv(&text)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    /// Phrase for `relation` walked in `direction`. Unknown relations fall
    /// back to the `RelatedTo` phrasing.
    pub fn phrase(&self, relation: &str, direction: Direction) -> &str {
        let entry = self
            .map
            .get(relation)
            .or_else(|| self.map.get(FALLBACK_RELATION));
        match (entry, direction) {
            (Some((fwd, _)), Direction::Forward) => fwd,
            (Some((_, inv)), Direction::Inverse) => inv,
            (None, _) => FALLBACK_PHRASE,
        }
    }
}

pub fn serialize_path(path: &ConceptPath, templates: &RelationTemplates) -> String {
    if path.hops.is_empty() {
        return format!("\"{}\".", path.start_label);
    }
    let mut out = String::new();
    let mut from = path.start_label.as_str();
    for (i, hop) in path.hops.iter().enumerate() {
        if i > 0 {
            out.push_str(", and ");
        }
        out.push('"');
        out.push_str(from);
        out.push_str("\" ");
        out.push_str(templates.phrase(&hop.relation, hop.direction));
        out.push_str(" \"");
        out.push_str(&hop.next_label);
        out.push('"');
        from = &hop.next_label;
    }
    out.push('.');
    out
}

/// What the edit distance is computed over and normalized by.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathNormalization {
    /// Character-level distance over serialized strings, divided by the
    /// longer string's character count.
    #[default]
    Characters,
    /// Distance over path elements (start node, then one element per hop of
    /// relation, direction and next node) divided by the longer element count.
    Hops,
}

impl fmt::Display for PathNormalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathNormalization::Characters => "characters",
            PathNormalization::Hops => "hops",
        })
    }
}

/// Character-level Levenshtein distance.
pub fn edit_distance(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

/// `1 - d(a, b) / max(|a|, |b|)` over characters; two empty strings are
/// identical.
pub fn normalized_similarity(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 1.0;
    }
    1.0 - edit_distance(a, b) as f64 / longest as f64
}

pub fn path_similarity(
    p: Option<&ConceptPath>,
    q: Option<&ConceptPath>,
    templates: &RelationTemplates,
) -> f64 {
    path_similarity_with(p, q, templates, PathNormalization::Characters)
}

pub fn path_similarity_with(
    p: Option<&ConceptPath>,
    q: Option<&ConceptPath>,
    templates: &RelationTemplates,
    mode: PathNormalization,
) -> f64 {
    let (Some(p), Some(q)) = (p, q) else {
        return 0.0;
    };
    match mode {
        PathNormalization::Characters => {
            normalized_similarity(&serialize_path(p, templates), &serialize_path(q, templates))
        }
        PathNormalization::Hops => {
            let a = elements(p);
            let b = elements(q);
            let longest = a.len().max(b.len());
            1.0 - strsim::generic_levenshtein(&a, &b) as f64 / longest as f64
        }
    }
}

fn elements(path: &ConceptPath) -> Vec<(&str, Option<Direction>, &str)> {
    std::iter::once(("", None, path.start_label.as_str()))
        .chain(
            path.hops
                .iter()
                .map(|h| (h.relation.as_str(), Some(h.direction), h.next_label.as_str())),
        )
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example_is_byte_exact() {
        let path = ConceptPath::new("a")
            .hop("HasA", Direction::Forward, "b")
            .hop("Causes", Direction::Inverse, "c");
        assert_eq!(
            serialize_path(&path, &RelationTemplates::default()),
            r#""a" has a "b", and "b" is caused by "c"."#
        );
        assert_eq!(path.end_label(), "c");
    }

    #[test]
    fn zero_hop_and_single_hop() {
        let t = RelationTemplates::default();
        assert_eq!(serialize_path(&ConceptPath::new("fire"), &t), r#""fire"."#);
        let p = ConceptPath::new("x").hop("Causes", Direction::Forward, "y");
        assert_eq!(serialize_path(&p, &t), r#""x" causes "y"."#);
    }

    #[test]
    fn unknown_relation_falls_back() {
        let t = RelationTemplates::default();
        assert_eq!(t.phrase("ObstructedBy", Direction::Forward), "is related to");
        assert_eq!(t.phrase("ObstructedBy", Direction::Inverse), "is related to");
        let empty = RelationTemplates::from_tsv("").unwrap();
        assert_eq!(empty.phrase("Causes", Direction::Forward), "is related to");
    }

    #[test]
    fn bundled_table_has_all_relations() {
        let t = RelationTemplates::default();
        assert_eq!(t.len(), 34);
        assert_eq!(t.phrase("dbpedia", Direction::Inverse), "has association from the DBpedia concept of");
        assert_eq!(t.phrase("CapableOf", Direction::Inverse), "enables");
    }

    #[test]
    fn template_file_errors() {
        assert!(RelationTemplates::from_tsv("Causes\tcauses\n").is_err());
        assert!(RelationTemplates::from_tsv("Causes\tcauses\t\n").is_err());
        assert!(RelationTemplates::from_tsv("A\tx\ty\nA\tx\ty\n").is_err());
    }

    #[test]
    fn similarity_examples() {
        let t = RelationTemplates::default();
        let p = ConceptPath::new("a").hop("HasA", Direction::Forward, "b");
        assert_eq!(path_similarity(Some(&p), Some(&p), &t), 1.0);
        assert_eq!(path_similarity(Some(&p), None, &t), 0.0);
        assert_eq!(path_similarity(None, Some(&p), &t), 0.0);
        assert_eq!(path_similarity(None, None, &t), 0.0);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert!((normalized_similarity("kitten", "sitting") - (1.0 - 3.0 / 7.0)).abs() < 1e-15);
    }

    #[test]
    fn hop_normalization() {
        let t = RelationTemplates::default();
        let p = ConceptPath::new("a").hop("HasA", Direction::Forward, "b");
        let q = ConceptPath::new("a").hop("HasA", Direction::Inverse, "b");
        let s = path_similarity_with(Some(&p), Some(&q), &t, PathNormalization::Hops);
        assert_eq!(s, 0.5);
        assert_eq!(
            path_similarity_with(Some(&p), Some(&p), &t, PathNormalization::Hops),
            1.0
        );
    }

    fn arb_path() -> impl Strategy<Value = ConceptPath> {
        let rel = prop::sample::select(vec!["Causes", "HasA", "IsA", "RelatedTo", "Unknown"]);
        let dir = prop_oneof![Just(Direction::Forward), Just(Direction::Inverse)];
        (
            "[a-d]{1,3}",
            prop::collection::vec((rel, dir, "[a-d]{1,3}"), 0..4),
        )
            .prop_map(|(start, hops)| {
                hops.into_iter()
                    .fold(ConceptPath::new(start), |p, (r, d, n)| p.hop(r, d, &n))
            })
    }

    proptest! {
        #[test]
        fn similarity_bounded_and_symmetric(p in arb_path(), q in arb_path()) {
            let t = RelationTemplates::default();
            let a = path_similarity(Some(&p), Some(&q), &t);
            let b = path_similarity(Some(&q), Some(&p), &t);
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert_eq!(a, b);
            let identical = serialize_path(&p, &t) == serialize_path(&q, &t);
            prop_assert_eq!(a == 1.0, identical);
        }
    }
}
