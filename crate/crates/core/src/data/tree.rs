use std::collections::VecDeque;

use crate::{Error, Result};

/// A dependency tree over `n` tokens with its derived geometry.
///
/// `heads` is 1-based with 0 marking the root, as in CoNLL-U. Depths,
/// distances and spans use 0-based token positions.
#[derive(Clone, Debug, PartialEq)]
pub struct ParseTree {
    heads: Vec<usize>,
    depths: Vec<usize>,
    distances: Vec<usize>,
    constituents: Vec<(usize, usize)>,
    subtrees: Vec<Option<(usize, usize)>>,
}

impl ParseTree {
    pub fn from_heads(heads: &[usize]) -> Result<Self> {
        let n = heads.len();
        if n == 0 {
            return Err(Error::Tree("empty sentence".into()));
        }
        let mut root = None;
        for (i, &h) in heads.iter().enumerate() {
            if h > n {
                return Err(Error::Tree(format!(
                    "token {} has head {h} beyond {n}",
                    i + 1
                )));
            }
            if h == i + 1 {
                return Err(Error::Tree(format!("token {} heads itself", i + 1)));
            }
            if h == 0 {
                if let Some(r) = root {
                    return Err(Error::Tree(format!(
                        "multiple roots: {} and {}",
                        r + 1,
                        i + 1
                    )));
                }
                root = Some(i);
            }
        }
        if root.is_none() {
            return Err(Error::Tree("no root".into()));
        }

        let mut depths = vec![usize::MAX; n];
        for start in 0..n {
            let mut path = Vec::new();
            let mut cur = start;
            while depths[cur] == usize::MAX {
                if path.len() > n {
                    return Err(Error::Tree(format!("cycle through token {}", start + 1)));
                }
                path.push(cur);
                match heads[cur] {
                    0 => {
                        depths[cur] = 0;
                        path.pop();
                        break;
                    }
                    h => cur = h - 1,
                }
            }
            let mut d = depths[cur];
            while let Some(p) = path.pop() {
                d += 1;
                depths[p] = d;
            }
        }

        let mut adj = vec![Vec::new(); n];
        for (i, &h) in heads.iter().enumerate() {
            if h > 0 {
                adj[i].push(h - 1);
                adj[h - 1].push(i);
            }
        }
        let mut distances = vec![0; n * n];
        let mut queue = VecDeque::new();
        for s in 0..n {
            let row = &mut distances[s * n..(s + 1) * n];
            let mut seen = vec![false; n];
            seen[s] = true;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        row[v] = row[u] + 1;
                        queue.push_back(v);
                    }
                }
            }
        }

        let mut lo: Vec<usize> = (0..n).collect();
        let mut hi: Vec<usize> = (0..n).collect();
        let mut size = vec![1usize; n];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(depths[i]));
        for &i in &order {
            if heads[i] > 0 {
                let h = heads[i] - 1;
                lo[h] = lo[h].min(lo[i]);
                hi[h] = hi[h].max(hi[i]);
                size[h] += size[i];
            }
        }
        let subtrees: Vec<Option<(usize, usize)>> = (0..n)
            .map(|i| (hi[i] - lo[i] + 1 == size[i]).then_some((lo[i], hi[i])))
            .collect();
        let mut constituents: Vec<(usize, usize)> = subtrees.iter().flatten().copied().collect();
        constituents.sort_unstable();
        constituents.dedup();

        Ok(ParseTree {
            heads: heads.to_vec(),
            depths,
            distances,
            constituents,
            subtrees,
        })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn heads(&self) -> &[usize] {
        &self.heads
    }

    pub fn root(&self) -> usize {
        self.heads
            .iter()
            .position(|&h| h == 0)
            .expect("validated root")
    }

    /// Edges from the root to each token.
    pub fn depths(&self) -> &[usize] {
        &self.depths
    }

    /// Path length between tokens `i` and `j`.
    pub fn distance(&self, i: usize, j: usize) -> usize {
        self.distances[i * self.len() + j]
    }

    /// Row-major `n × n` distance matrix.
    pub fn distance_matrix(&self) -> &[usize] {
        &self.distances
    }

    /// Contiguous subtree spans `(start, end)`, inclusive and sorted.
    pub fn constituents(&self) -> &[(usize, usize)] {
        &self.constituents
    }

    /// The span covered by token `i` and its descendants, if contiguous.
    pub fn subtree_span(&self, i: usize) -> Option<(usize, usize)> {
        self.subtrees[i]
    }

    /// Direct dependents of token `i`, in order.
    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&c| self.heads[c] == i + 1)
            .collect()
    }

    pub fn is_constituent(&self, start: usize, end: usize) -> bool {
        self.constituents.binary_search(&(start, end)).is_ok()
    }
}

/// Alias matching the operation name used throughout the pipeline.
pub fn tree_metrics(heads: &[usize]) -> Result<ParseTree> {
    ParseTree::from_heads(heads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain() {
        let t = tree_metrics(&[0, 1, 2]).unwrap();
        assert_eq!(t.depths(), &[0, 1, 2]);
        assert_eq!(t.distance(0, 2), 2);
        assert_eq!(t.constituents(), &[(0, 2), (1, 2), (2, 2)]);
    }

    #[test]
    fn star() {
        let t = tree_metrics(&[0, 1, 1, 1]).unwrap();
        assert_eq!(t.depths(), &[0, 1, 1, 1]);
        for i in 1..4 {
            for j in 1..4 {
                if i != j {
                    assert_eq!(t.distance(i, j), 2);
                }
            }
        }
    }

    #[test]
    fn straddling_span_is_not_a_constituent() {
        // the(1)->dog(2), dog->runs(3), runs root, fast(4)->runs
        let t = tree_metrics(&[2, 3, 0, 3]).unwrap();
        assert!(t.is_constituent(0, 1));
        assert!(!t.is_constituent(1, 2));
        assert!(t.is_constituent(0, 3));
    }

    #[test]
    fn malformed() {
        assert!(matches!(tree_metrics(&[]), Err(Error::Tree(_))));
        assert!(matches!(tree_metrics(&[0, 0]), Err(Error::Tree(_))));
        assert!(matches!(tree_metrics(&[2, 1]), Err(Error::Tree(_))));
        assert!(matches!(tree_metrics(&[0, 3, 2]), Err(Error::Tree(_))));
        assert!(matches!(tree_metrics(&[0, 5]), Err(Error::Tree(_))));
        assert!(matches!(tree_metrics(&[1]), Err(Error::Tree(_))));
    }

    #[test]
    fn non_projective_subtree_is_dropped() {
        let t = tree_metrics(&[3, 0, 2, 1]).unwrap();
        assert_eq!(t.constituents(), &[(0, 3), (3, 3)]);
    }
}
