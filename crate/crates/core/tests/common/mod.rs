//! Reference implementations shared by the integration tests. Each one is
//! written from the textbook definition, not from the library code.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use eci_retrieval::syntax_metric::DepTree;

/// Small deterministic generator so oracle inputs are reproducible
/// without a crate dependency.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}

/// Two-row Levenshtein DP over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Ordered tree as preorder labels plus parent links.
#[derive(Debug, Clone)]
pub struct Shape {
    pub parent: Vec<Option<usize>>,
}

/// Every ordered tree shape with exactly `n` nodes, nodes in preorder.
pub fn shapes(n: usize) -> Vec<Shape> {
    // a shape is built by attaching each new preorder node to some node on
    // the rightmost path of the tree so far
    fn grow(parent: &mut Vec<Option<usize>>, n: usize, out: &mut Vec<Shape>) {
        if parent.len() == n {
            out.push(Shape { parent: parent.clone() });
            return;
        }
        let mut spine = vec![parent.len() - 1];
        while let Some(p) = parent[*spine.last().unwrap()] {
            spine.push(p);
        }
        for &p in &spine {
            parent.push(Some(p));
            grow(parent, n, out);
            parent.pop();
        }
    }
    let mut out = Vec::new();
    if n > 0 {
        grow(&mut vec![None], n, &mut out);
    }
    out
}

pub fn tree_from(labels: &[&str], shape: &Shape) -> DepTree {
    DepTree::from_parents(labels, &shape.parent)
}

/// `anc[a][b]`: a is a proper ancestor of b.
fn ancestry(shape: &Shape) -> Vec<Vec<bool>> {
    let n = shape.parent.len();
    let mut anc = vec![vec![false; n]; n];
    for (b, &first) in shape.parent.iter().enumerate() {
        let mut p = first;
        while let Some(a) = p {
            anc[a][b] = true;
            p = shape.parent[a];
        }
    }
    anc
}

/// Inclusion-maximal edit mappings between two shapes: one-to-one node
/// pairs preserving both ancestry and preorder on each side.
pub fn maximal_mappings(s1: &Shape, s2: &Shape) -> Vec<Vec<(usize, usize)>> {
    let (a1, a2) = (ancestry(s1), ancestry(s2));
    let (n1, n2) = (s1.parent.len(), s2.parent.len());
    let compatible = |(i, j): (usize, usize), (k, l): (usize, usize)| {
        i != k && j != l && (i < k) == (j < l) && a1[i][k] == a2[j][l] && a1[k][i] == a2[l][j]
    };
    let mut all = Vec::new();
    fn walk(
        i: usize,
        n1: usize,
        n2: usize,
        cur: &mut Vec<(usize, usize)>,
        all: &mut Vec<Vec<(usize, usize)>>,
        ok: &dyn Fn((usize, usize), (usize, usize)) -> bool,
    ) {
        if i == n1 {
            all.push(cur.clone());
            return;
        }
        walk(i + 1, n1, n2, cur, all, ok);
        for j in 0..n2 {
            if cur.iter().all(|&p| ok(p, (i, j))) {
                cur.push((i, j));
                walk(i + 1, n1, n2, cur, all, ok);
                cur.pop();
            }
        }
    }
    walk(0, n1, n2, &mut Vec::new(), &mut all, &compatible);
    all.iter()
        .filter(|m| {
            (0..n1).all(|i| {
                (0..n2).all(|j| m.contains(&(i, j)) || !m.iter().all(|&p| compatible(p, (i, j))))
            })
        })
        .cloned()
        .collect()
}

/// Edit distance over a fixed set of mappings: deleting everything,
/// inserting everything, and refunding each mapped pair of equal labels.
pub fn mapping_distance(
    w1: &[u64],
    l1: &[u8],
    w2: &[u64],
    l2: &[u8],
    mappings: &[Vec<(usize, usize)>],
) -> u64 {
    let total: u64 = w1.iter().sum::<u64>() + w2.iter().sum::<u64>();
    let best = mappings
        .iter()
        .map(|m| {
            m.iter()
                .filter(|&&(i, j)| l1[i] == l2[j])
                .map(|&(i, _)| 2 * w1[i])
                .sum::<u64>()
        })
        .max()
        .unwrap_or(0);
    total - best
}

/// Labeled tree as nested nodes for the forest recursion.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Node {
    pub label: String,
    pub children: Vec<Node>,
}

pub fn nest(labels: &[&str], parent: &[Option<usize>]) -> Node {
    fn build(i: usize, labels: &[&str], parent: &[Option<usize>]) -> Node {
        Node {
            label: labels[i].to_string(),
            children: (0..labels.len())
                .filter(|&c| parent[c] == Some(i))
                .map(|c| build(c, labels, parent))
                .collect(),
        }
    }
    let root = parent.iter().position(Option::is_none).expect("a root");
    build(root, labels, parent)
}

/// Edit distance by the recursive forest definition: remove the rightmost
/// root of either forest, or match the two rightmost roots.
pub fn forest_distance(f: &[Node], g: &[Node], weight: &dyn Fn(&str) -> u64) -> u64 {
    fn size(f: &[Node], weight: &dyn Fn(&str) -> u64) -> u64 {
        f.iter().map(|n| weight(&n.label) + size(&n.children, weight)).sum()
    }
    fn go(
        f: &[Node],
        g: &[Node],
        weight: &dyn Fn(&str) -> u64,
        memo: &mut HashMap<(Vec<Node>, Vec<Node>), u64>,
    ) -> u64 {
        if f.is_empty() {
            return size(g, weight);
        }
        if g.is_empty() {
            return size(f, weight);
        }
        let key = (f.to_vec(), g.to_vec());
        if let Some(&d) = memo.get(&key) {
            return d;
        }
        let (v, f_rest) = f.split_last().unwrap();
        let (w, g_rest) = g.split_last().unwrap();
        let mut f_del: Vec<Node> = f_rest.to_vec();
        f_del.extend(v.children.iter().cloned());
        let mut g_del: Vec<Node> = g_rest.to_vec();
        g_del.extend(w.children.iter().cloned());
        let relabel = if v.label == w.label { 0 } else { weight(&v.label) + weight(&w.label) };
        let d = (go(&f_del, g, weight, memo) + weight(&v.label))
            .min(go(f, &g_del, weight, memo) + weight(&w.label))
            .min(go(f_rest, g_rest, weight, memo) + go(&v.children, &w.children, weight, memo) + relabel);
        memo.insert(key, d);
        d
    }
    go(f, g, weight, &mut HashMap::new())
}

/// Shortest hop count between every ordered node pair of an undirected
/// multigraph by enumerating all simple paths. Also returns the
/// lexicographically smallest node sequence among the shortest ones.
pub fn all_simple_shortest(n: usize, edges: &[(usize, usize)]) -> BTreeMap<(usize, usize), Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut best: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    fn dfs(
        path: &mut Vec<usize>,
        on_path: &mut Vec<bool>,
        adj: &[Vec<usize>],
        best: &mut BTreeMap<(usize, usize), Vec<usize>>,
    ) {
        let (s, t) = (path[0], *path.last().unwrap());
        let better = match best.get(&(s, t)) {
            None => true,
            Some(b) => path.len() < b.len() || (path.len() == b.len() && path[..] < b[..]),
        };
        if better {
            best.insert((s, t), path.clone());
        }
        for &next in &adj[t] {
            if !on_path[next] {
                on_path[next] = true;
                path.push(next);
                dfs(path, on_path, adj, best);
                path.pop();
                on_path[next] = false;
            }
        }
    }
    for s in 0..n {
        let mut on_path = vec![false; n];
        on_path[s] = true;
        dfs(&mut vec![s], &mut on_path, &adj, &mut best);
    }
    best
}
