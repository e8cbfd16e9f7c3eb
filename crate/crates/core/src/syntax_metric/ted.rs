//! Zhang-Shasha ordered tree edit distance over postorder-flattened trees.

use super::{DepTree, LabelWeights};

/// A tree flattened for repeated distance queries: postorder label classes,
/// per-node weights, leftmost-leaf descendants and keyroots.
#[derive(Debug, Clone)]
pub struct PreparedTree {
    class: Vec<u32>,
    weight: Vec<u32>,
    /// `leftmost[i]` is the postorder index of node i's leftmost leaf.
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
}

impl PreparedTree {
    pub fn new(tree: &DepTree, w: &LabelWeights) -> Self {
        let order = tree.postorder();
        let n = order.len();
        let mut position = vec![0usize; tree.size()];
        for (pos, &node) in order.iter().enumerate() {
            position[node] = pos;
        }
        let mut class = Vec::with_capacity(n);
        let mut weight = Vec::with_capacity(n);
        let mut leftmost = vec![0usize; n];
        for (pos, &node) in order.iter().enumerate() {
            let (c, wt) = w.class_of(&tree.node(node).label);
            class.push(c);
            weight.push(wt);
            leftmost[pos] = match tree.node(node).children.first() {
                // children precede their parent in postorder
                Some(&first) => leftmost[position[first]],
                None => pos,
            };
        }
        // A keyroot is the highest node sharing its leftmost leaf.
        let mut keyroots = Vec::new();
        let mut seen = vec![false; n];
        for pos in (0..n).rev() {
            if !seen[leftmost[pos]] {
                seen[leftmost[pos]] = true;
                keyroots.push(pos);
            }
        }
        keyroots.reverse();
        Self {
            class,
            weight,
            leftmost,
            keyroots,
        }
    }

    pub fn len(&self) -> usize {
        self.class.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class.is_empty()
    }

    /// Cost of deleting (or inserting) every node.
    pub fn total_weight(&self) -> u64 {
        self.weight.iter().map(|&w| w as u64).sum()
    }

    fn rename(&self, i: usize, other: &Self, j: usize) -> u64 {
        if self.class[i] == other.class[j] {
            0
        } else {
            self.weight[i] as u64 + other.weight[j] as u64
        }
    }

    pub fn distance(&self, other: &Self) -> u64 {
        let (n, m) = (self.len(), other.len());
        let mut tree_dist = vec![0u64; n * m];
        let cols = m + 1;
        let mut forest = vec![0u64; (n + 1) * cols];

        for &i in &self.keyroots {
            for &j in &other.keyroots {
                let li = self.leftmost[i];
                let lj = other.leftmost[j];
                // forest row/col 0 stands for the empty forest before li/lj;
                // row r covers postorder nodes li..li+r.
                let rows = i - li + 1;
                let span = j - lj + 1;
                forest[0] = 0;
                for r in 1..=rows {
                    forest[r * cols] = forest[(r - 1) * cols] + self.weight[li + r - 1] as u64;
                }
                for c in 1..=span {
                    forest[c] = forest[c - 1] + other.weight[lj + c - 1] as u64;
                }
                for r in 1..=rows {
                    let x = li + r - 1;
                    let del = self.weight[x] as u64;
                    for c in 1..=span {
                        let y = lj + c - 1;
                        let ins = other.weight[y] as u64;
                        let a = forest[(r - 1) * cols + c] + del;
                        let b = forest[r * cols + c - 1] + ins;
                        let best = if self.leftmost[x] == li && other.leftmost[y] == lj {
                            let d = a.min(b).min(forest[(r - 1) * cols + c - 1] + self.rename(x, other, y));
                            tree_dist[x * m + y] = d;
                            d
                        } else {
                            let pr = self.leftmost[x] - li;
                            let pc = other.leftmost[y] - lj;
                            a.min(b).min(forest[pr * cols + pc] + tree_dist[x * m + y])
                        };
                        forest[r * cols + c] = best;
                    }
                }
            }
        }
        tree_dist[(n - 1) * m + (m - 1)]
    }
}
