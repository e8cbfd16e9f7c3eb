//! Dependency trees and the weighted tree-edit-distance similarity.
//!
//! Nodes carry only their dependency relation label. Per-sentence trees from
//! a multi-sentence document hang under an artificial `DOC` node, which is
//! absent from the weight table and therefore free to edit.

mod conllu;
mod ted;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

pub use conllu::ConlluError;
pub use ted::PreparedTree;

/// Label of the artificial node joining sentence trees of one document.
pub const DOC_LABEL: &str = "DOC";
pub const ROOT_LABEL: &str = "ROOT";
/// Decay constant of the distance-to-similarity map.
pub const DECAY: f64 = 0.05;

/// Nesting limit of the bracket notation parser.
pub const MAX_BRACKET_DEPTH: usize = 256;

const DEFAULT_WEIGHTS: &str = include_str!("../../data/label_weights.tsv");

#[derive(Debug, Error)]
pub enum SyntaxError {
    #[error("update cost needs at least one label")]
    BothAbsent,
    #[error("label weights line {line}: {message}")]
    Weights { line: usize, message: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bracket tree: {0}")]
    Bracket(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepNode {
    pub label: String,
    pub token_index: usize,
    /// Indices into the owning tree's node arena, ascending by `token_index`.
    pub children: Vec<usize>,
}

/// An ordered, rooted dependency tree stored as a node arena.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepTree {
    nodes: Vec<DepNode>,
    root: usize,
}

impl DepTree {
    pub fn root(&self) -> &DepNode {
        &self.nodes[self.root]
    }

    pub fn root_index(&self) -> usize {
        self.root
    }

    pub fn node(&self, index: usize) -> &DepNode {
        &self.nodes[index]
    }

    pub fn size(&self) -> usize {
        self.nodes.len()
    }

    /// Node indices in left-to-right postorder.
    pub fn postorder(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, 0usize)];
        while let Some(top) = stack.last_mut() {
            let (node, next) = *top;
            match self.nodes[node].children.get(next) {
                Some(&child) => {
                    top.1 += 1;
                    stack.push((child, 0));
                }
                None => {
                    out.push(node);
                    stack.pop();
                }
            }
        }
        out
    }

    /// Parses bracket notation such as `ROOT(nsubj,dobj(det))`. Token indices
    /// are assigned in preorder, so children stay ascending.
    pub fn from_brackets(text: &str) -> Result<Self, SyntaxError> {
        let mut parser = BracketParser {
            chars: text.char_indices().peekable(),
            nodes: Vec::new(),
            text,
        };
        let root = parser.node(0)?;
        parser.skip_ws();
        if let Some((pos, c)) = parser.chars.next() {
            return Err(SyntaxError::Bracket(format!(
                "unexpected {c:?} at offset {pos}"
            )));
        }
        Ok(DepTree {
            nodes: parser.nodes,
            root,
        })
    }

    /// Builds a tree from parent links; `parents[i]` is `None` for the root.
    /// Children are ordered by index. Used by generators and oracles.
    pub fn from_parents(labels: &[&str], parents: &[Option<usize>]) -> Self {
        assert_eq!(labels.len(), parents.len());
        let mut nodes: Vec<DepNode> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| DepNode {
                label: l.to_string(),
                token_index: i + 1,
                children: Vec::new(),
            })
            .collect();
        let mut root = None;
        for (i, p) in parents.iter().enumerate() {
            match p {
                Some(p) => nodes[*p].children.push(i),
                None => root = Some(i),
            }
        }
        DepTree {
            nodes,
            root: root.expect("exactly one root"),
        }
    }

    fn write_brackets(&self, out: &mut String) {
        enum Step {
            Node(usize),
            Punct(char),
        }
        let mut stack = vec![Step::Node(self.root)];
        while let Some(step) = stack.pop() {
            match step {
                Step::Punct(c) => out.push(c),
                Step::Node(n) => {
                    let node = &self.nodes[n];
                    out.push_str(&node.label);
                    if !node.children.is_empty() {
                        out.push('(');
                        stack.push(Step::Punct(')'));
                        for (i, &c) in node.children.iter().enumerate().rev() {
                            stack.push(Step::Node(c));
                            if i > 0 {
                                stack.push(Step::Punct(','));
                            }
                        }
                    }
                }
            }
        }
    }
}

impl fmt::Display for DepTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.write_brackets(&mut s);
        f.write_str(&s)
    }
}

struct BracketParser<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    nodes: Vec<DepNode>,
    text: &'a str,
}

impl BracketParser<'_> {
    fn skip_ws(&mut self) {
        while matches!(self.chars.peek(), Some((_, c)) if c.is_whitespace()) {
            self.chars.next();
        }
    }

    fn node(&mut self, depth: usize) -> Result<usize, SyntaxError> {
        if depth > MAX_BRACKET_DEPTH {
            return Err(SyntaxError::Bracket(format!("nesting deeper than {MAX_BRACKET_DEPTH}")));
        }
        self.skip_ws();
        let start = self.chars.peek().map(|&(i, _)| i).unwrap_or(self.text.len());
        let mut end = start;
        while let Some(&(i, c)) = self.chars.peek() {
            if c == '(' || c == ')' || c == ',' || c.is_whitespace() {
                break;
            }
            end = i + c.len_utf8();
            self.chars.next();
        }
        if end == start {
            return Err(SyntaxError::Bracket(format!("missing label at offset {start}")));
        }
        let index = self.nodes.len();
        self.nodes.push(DepNode {
            label: self.text[start..end].to_string(),
            token_index: index + 1,
            children: Vec::new(),
        });
        self.skip_ws();
        if matches!(self.chars.peek(), Some((_, '('))) {
            self.chars.next();
            loop {
                let child = self.node(depth + 1)?;
                self.nodes[index].children.push(child);
                self.skip_ws();
                match self.chars.next() {
                    Some((_, ',')) => continue,
                    Some((_, ')')) => break,
                    Some((i, c)) => {
                        return Err(SyntaxError::Bracket(format!("unexpected {c:?} at offset {i}")))
                    }
                    None => return Err(SyntaxError::Bracket("unclosed '('".into())),
                }
            }
        }
        Ok(index)
    }
}

/// Builds a document tree from CoNLL-U text.
///
/// A single sentence yields its own tree. Several sentences are joined under
/// a `DOC` node (token index 0) in document order; token indices are offset
/// so they stay unique and ascending across the document. The label of the
/// word attached to HEAD 0 is normalized to `ROOT`; all other labels are kept
/// verbatim.
pub fn build_tree(conllu_text: &str) -> Result<DepTree, ConlluError> {
    let sentences = conllu::parse(conllu_text)?;
    let multi = sentences.len() > 1;
    let mut nodes = Vec::new();
    let mut sentence_roots = Vec::new();
    if multi {
        nodes.push(DepNode {
            label: DOC_LABEL.to_string(),
            token_index: 0,
            children: Vec::new(),
        });
    }
    let mut offset = 0;
    for sentence in &sentences {
        let base = nodes.len();
        for tok in sentence {
            let label = if tok.head == 0 && tok.deprel.eq_ignore_ascii_case("root") {
                ROOT_LABEL.to_string()
            } else {
                tok.deprel.clone()
            };
            nodes.push(DepNode {
                label,
                token_index: offset + tok.id,
                children: Vec::new(),
            });
        }
        for tok in sentence {
            let me = base + tok.id - 1;
            if tok.head == 0 {
                sentence_roots.push(me);
            } else {
                nodes[base + tok.head - 1].children.push(me);
            }
        }
        offset += sentence.len();
    }
    let root = if multi {
        nodes[0].children = sentence_roots;
        0
    } else {
        sentence_roots[0]
    };
    Ok(DepTree { nodes, root })
}

/// Edit cost weight per dependency label; unlisted labels weigh 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelWeights {
    weights: BTreeMap<String, u32>,
}

impl Default for LabelWeights {
    fn default() -> Self {
        Self::from_tsv(DEFAULT_WEIGHTS).expect("bundled label weights are valid")
    }
}

impl LabelWeights {
    /// `label<TAB>weight` per line; `#` comments and blank lines ignored.
    pub fn from_tsv(text: &str) -> Result<Self, SyntaxError> {
        let mut weights = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| SyntaxError::Weights {
                line: idx + 1,
                message,
            };
            let (label, weight) = line
                .split_once('\t')
                .ok_or_else(|| err("expected label<TAB>weight".into()))?;
            let label = label.trim();
            if label.is_empty() {
                return Err(err("empty label".into()));
            }
            let weight: u32 = weight
                .trim()
                .parse()
                .map_err(|_| err(format!("invalid weight {weight:?}")))?;
            if weights.insert(label.to_string(), weight).is_some() {
                return Err(err(format!("duplicate label {label:?}")));
            }
        }
        Ok(Self { weights })
    }

    pub fn load(path: &Path) -> Result<Self, SyntaxError> {
        let text = fs::read_to_string(path).map_err(|source| SyntaxError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_tsv(&text)
    }

    pub fn weight(&self, label: &str) -> u32 {
        self.weights.get(label).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u32)> {
        self.weights.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Dense class id used by the edit-distance kernel. Labels of weight 0
    /// are cost-equivalent to each other and share one class.
    fn class_of(&self, label: &str) -> (u32, u32) {
        match self.weights.get_key_value(label) {
            Some((_, &w)) if w > 0 => {
                let rank = self.weights.keys().take_while(|k| k.as_str() < label).count() as u32;
                (rank, w)
            }
            _ => (u32::MAX, 0),
        }
    }
}

/// Cost of turning `l1` into `l2`; `None` on one side is an insertion or
/// deletion.
pub fn update_cost(l1: Option<&str>, l2: Option<&str>, w: &LabelWeights) -> Result<u32, SyntaxError> {
    match (l1, l2) {
        (None, None) => Err(SyntaxError::BothAbsent),
        (Some(a), Some(b)) if a == b => Ok(0),
        (Some(a), Some(b)) => Ok(w.weight(a) + w.weight(b)),
        (Some(a), None) | (None, Some(a)) => Ok(w.weight(a)),
    }
}

/// Ordered tree edit distance under [`update_cost`].
pub fn tree_edit_distance(t1: &DepTree, t2: &DepTree, w: &LabelWeights) -> u64 {
    PreparedTree::new(t1, w).distance(&PreparedTree::new(t2, w))
}

pub fn similarity_from_distance(distance: u64) -> f64 {
    (-DECAY * distance as f64).exp()
}

pub fn syntactic_similarity(t1: &DepTree, t2: &DepTree, w: &LabelWeights) -> f64 {
    similarity_from_distance(tree_edit_distance(t1, t2, w))
}

/// Scores one query tree against many candidates in parallel, preserving
/// candidate order.
pub fn batch_similarity(query: &DepTree, candidates: &[&DepTree], w: &LabelWeights) -> Vec<f64> {
    let query = PreparedTree::new(query, w);
    candidates
        .par_iter()
        .map(|c| similarity_from_distance(query.distance(&PreparedTree::new(c, w))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(s: &str) -> DepTree {
        DepTree::from_brackets(s).unwrap()
    }

    const FIRE: &str = "1\tFire\tfire\tNOUN\t_\t_\t2\tnsubj\t_\t_\n\
                        2\tdestroys\tdestroy\tVERB\t_\t_\t0\tROOT\t_\t_\n\
                        3\tbuildings\tbuilding\tNOUN\t_\t_\t2\tdobj\t_\t_\n";

    #[test]
    fn single_sentence_tree() {
        let t = build_tree(FIRE).unwrap();
        assert_eq!(t.size(), 3);
        assert_eq!(t.root().label, "ROOT");
        let kids: Vec<_> = t
            .root()
            .children
            .iter()
            .map(|&c| (t.node(c).label.as_str(), t.node(c).token_index))
            .collect();
        assert_eq!(kids, vec![("nsubj", 1), ("dobj", 3)]);
        assert_eq!(t.to_string(), "ROOT(nsubj,dobj)");
    }

    #[test]
    fn multi_sentence_joins_under_doc() {
        let text = "1\tBoom\t_\t_\t_\t_\t0\tROOT\t_\t_\n\n1\tFire\t_\t_\t_\t_\t0\troot\t_\t_\n";
        let t = build_tree(text).unwrap();
        assert_eq!(t.size(), 3);
        assert_eq!(t.root().label, DOC_LABEL);
        assert_eq!(t.to_string(), "DOC(ROOT,ROOT)");
        let idx: Vec<_> = t.root().children.iter().map(|&c| t.node(c).token_index).collect();
        assert_eq!(idx, vec![1, 2]);
    }

    #[test]
    fn build_tree_errors() {
        assert!(build_tree("").is_err());
        let cyc = "1\ta\t_\t_\t_\t_\t2\tdep\t_\t_\n2\tb\t_\t_\t_\t_\t1\tdep\t_\t_\n3\tc\t_\t_\t_\t_\t0\tROOT\t_\t_\n";
        assert!(build_tree(cyc).unwrap_err().message.contains("cycle"));
    }

    #[test]
    fn bracket_round_trip() {
        for s in ["ROOT", "ROOT(nsubj,dobj(det))", "DOC(ROOT(a,b),ROOT)"] {
            assert_eq!(tree(s).to_string(), s);
        }
        assert!(DepTree::from_brackets("ROOT(").is_err());
        assert!(DepTree::from_brackets("a b").is_err());
        assert!(DepTree::from_brackets("").is_err());
        let deep = format!("{}x{}", "x(".repeat(MAX_BRACKET_DEPTH + 1), ")".repeat(MAX_BRACKET_DEPTH + 1));
        assert!(DepTree::from_brackets(&deep).is_err());
        let ok = format!("{}x{}", "x(".repeat(MAX_BRACKET_DEPTH), ")".repeat(MAX_BRACKET_DEPTH));
        assert_eq!(DepTree::from_brackets(&ok).unwrap().to_string(), ok);
    }

    #[test]
    fn bundled_weights() {
        let w = LabelWeights::default();
        assert_eq!(w.len(), 34);
        for (label, weight) in [("ROOT", 5), ("nsubj", 5), ("dobj", 4), ("prep", 3), ("det", 1), ("pobj", 4), ("xcomp", 3), ("acl", 2)] {
            assert_eq!(w.weight(label), weight, "{label}");
        }
        assert_eq!(w.weight(DOC_LABEL), 0);
        assert_eq!(w.weight("punct"), 0);
    }

    #[test]
    fn update_costs() {
        let w = LabelWeights::default();
        assert_eq!(update_cost(Some("nsubj"), Some("nsubj"), &w).unwrap(), 0);
        assert_eq!(update_cost(Some("nsubj"), Some("dobj"), &w).unwrap(), 9);
        assert_eq!(update_cost(None, Some("det"), &w).unwrap(), 1);
        assert_eq!(update_cost(Some("det"), None, &w).unwrap(), 1);
        assert!(matches!(update_cost(None, None, &w), Err(SyntaxError::BothAbsent)));
    }

    #[test]
    fn ted_spot_values() {
        let w = LabelWeights::default();
        let t = tree("ROOT(nsubj,dobj(det))");
        assert_eq!(tree_edit_distance(&t, &t, &w), 0);
        assert_eq!(tree_edit_distance(&tree("nsubj"), &tree("dobj"), &w), 9);
        assert_eq!(
            tree_edit_distance(&tree("ROOT(nsubj,dobj)"), &tree("ROOT(nsubj,dobj(det))"), &w),
            1
        );
        // zero-weight labels are free to relabel
        assert_eq!(tree_edit_distance(&tree("ROOT(punct)"), &tree("ROOT(dep)"), &w), 0);
    }

    #[test]
    fn similarity_values() {
        let w = LabelWeights::default();
        let t = tree("ROOT(nsubj)");
        assert_eq!(syntactic_similarity(&t, &t, &w), 1.0);
        assert!((similarity_from_distance(9) - 0.637_628_151_621_773_3).abs() < 1e-12);
        assert!((similarity_from_distance(1) - 0.951_229_424_500_714).abs() < 1e-12);
    }

    #[test]
    fn batch_matches_pairwise() {
        let w = LabelWeights::default();
        let q = tree("ROOT(nsubj,dobj(det))");
        let cands = [tree("ROOT"), tree("ROOT(nsubj)"), tree("DOC(ROOT(nsubj),ROOT(dobj))")];
        let refs: Vec<&DepTree> = cands.iter().collect();
        let batch = batch_similarity(&q, &refs, &w);
        for (c, s) in cands.iter().zip(batch) {
            assert_eq!(s, syntactic_similarity(&q, c, &w));
        }
    }

    #[test]
    fn custom_weights_parse() {
        let w = LabelWeights::from_tsv("# c\nfoo\t7\n\nbar\t0\n").unwrap();
        assert_eq!(w.weight("foo"), 7);
        assert!(LabelWeights::from_tsv("foo 7\n").is_err());
        assert!(LabelWeights::from_tsv("foo\tx\n").is_err());
        assert!(LabelWeights::from_tsv("foo\t1\nfoo\t2\n").is_err());
    }
}
