//! Greedy CART with Gini impurity and midpoint thresholds.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Impurity differences below this are treated as ties.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of features a tree may split on, drawn once per tree.
    pub feature_subsample: f64,
    pub seed: u64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: 4,
            min_leaf: 5,
            feature_subsample: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    /// `value <= threshold` goes left, `>` goes right.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// `[normal, anomaly]` counts of the fitting sample.
        counts: [usize; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub seed: u64,
}

/// One root-to-leaf step: `(feature, threshold, went_right)`.
pub type PathStep = (usize, f64, bool);

impl DecisionTree {
    pub fn root(&self) -> usize {
        0
    }

    pub fn depth(&self) -> usize {
        fn go(t: &DecisionTree, n: usize) -> usize {
            match t.nodes[n] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, 0)
    }

    /// Leaf reached by `sample`.
    pub fn route(&self, sample: &[f64]) -> usize {
        let mut n = 0;
        while let TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } = self.nodes[n]
        {
            n = if sample[feature] <= threshold { left } else { right };
        }
        n
    }

    /// Every leaf with its path from the root.
    pub fn leaves(&self) -> Vec<(usize, Vec<PathStep>)> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((n, path)) = stack.pop() {
            match self.nodes[n] {
                TreeNode::Leaf { .. } => out.push((n, path)),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let mut r = path.clone();
                    r.push((feature, threshold, true));
                    stack.push((right, r));
                    let mut l = path;
                    l.push((feature, threshold, false));
                    stack.push((left, l));
                }
            }
        }
        out.sort_by_key(|(n, _)| *n);
        out
    }
}

pub fn gini(counts: [usize; 2]) -> f64 {
    let n = (counts[0] + counts[1]) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let p = counts[1] as f64 / n;
    2.0 * p * (1.0 - p)
}

fn class_counts(rows: &[usize], y: &[u8]) -> [usize; 2] {
    let a = rows.iter().filter(|&&r| y[r] == 1).count();
    [rows.len() - a, a]
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    impurity: f64,
    feature: usize,
    threshold: f64,
}

fn best_split(x: &Matrix, y: &[u8], rows: &[usize], features: &[usize], min_leaf: usize) -> Option<Candidate> {
    let n = rows.len();
    let mut best: Option<Candidate> = None;
    let mut sorted = rows.to_vec();
    for &f in features {
        sorted.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)));
        let total = class_counts(&sorted, y);
        let mut left = [0usize; 2];
        for k in 0..n - 1 {
            left[usize::from(y[sorted[k]])] += 1;
            let (v, next) = (x.get(sorted[k], f), x.get(sorted[k + 1], f));
            if v == next {
                continue;
            }
            let nl = k + 1;
            let nr = n - nl;
            if nl < min_leaf || nr < min_leaf {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let imp = (nl as f64 * gini(left) + nr as f64 * gini(right)) / n as f64;
            let threshold = v + (next - v) / 2.0;
            // Features are scanned in ascending order and thresholds within a
            // feature ascend, so only a strictly better impurity displaces.
            if best.is_none_or(|b| imp < b.impurity - TIE_TOL) {
                best = Some(Candidate {
                    impurity: imp,
                    feature: f,
                    threshold,
                });
            }
        }
    }
    best
}

/// Fits a tree on the rows `rows` of `(x, y)`; `rows` may repeat (bootstrap).
pub fn fit_tree_rows(x: &Matrix, y: &[u8], rows: &[usize], config: &TreeConfig) -> Result<DecisionTree> {
    if rows.is_empty() || x.cols() == 0 {
        return Err(Error::Data("cannot fit a decision tree on an empty dataset".into()));
    }
    if y.len() != x.rows() {
        return Err(Error::Data(format!("{} labels for {} rows", y.len(), x.rows())));
    }
    let d = x.cols();
    let mut features: Vec<usize> = if config.feature_subsample >= 1.0 {
        (0..d).collect()
    } else {
        let k = ((config.feature_subsample * d as f64).ceil() as usize).clamp(1, d);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        sample(&mut rng, d, k).into_vec()
    };
    features.sort_unstable();

    let mut nodes = Vec::new();
    grow(x, y, rows.to_vec(), 0, &features, config, &mut nodes);
    Ok(DecisionTree {
        nodes,
        seed: config.seed,
    })
}

pub fn fit_tree(x: &Matrix, y: &[u8], config: &TreeConfig) -> Result<DecisionTree> {
    let rows: Vec<usize> = (0..x.rows()).collect();
    fit_tree_rows(x, y, &rows, config)
}

fn grow(
    x: &Matrix,
    y: &[u8],
    rows: Vec<usize>,
    depth: usize,
    features: &[usize],
    config: &TreeConfig,
    nodes: &mut Vec<TreeNode>,
) -> usize {
    let id = nodes.len();
    let counts = class_counts(&rows, y);
    nodes.push(TreeNode::Leaf { counts });
    let pure = counts[0] == 0 || counts[1] == 0;
    if pure || depth >= config.max_depth || rows.len() < 2 * config.min_leaf.max(1) {
        return id;
    }
    let Some(c) = best_split(x, y, &rows, features, config.min_leaf.max(1)) else {
        return id;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.into_iter().partition(|&i| x.get(i, c.feature) <= c.threshold);
    let left = grow(x, y, l, depth + 1, features, config, nodes);
    let right = grow(x, y, r, depth + 1, features, config, nodes);
    nodes[id] = TreeNode::Split {
        feature: c.feature,
        threshold: c.threshold,
        left,
        right,
    };
    id
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_values() {
        assert_eq!(gini([5, 5]), 0.5);
        assert_eq!(gini([0, 7]), 0.0);
    }

    #[test]
    fn one_dimensional_separable() {
        let xs = [1.0, 2.0, 3.0, 4.0, 4.5, 6.0, 7.0, 8.0];
        let x = Matrix::column(&xs);
        let y: Vec<u8> = xs.iter().map(|&v| u8::from(v > 5.0)).collect();
        let cfg = TreeConfig {
            min_leaf: 1,
            ..TreeConfig::default()
        };
        let t = fit_tree(&x, &y, &cfg).unwrap();
        assert_eq!(t.nodes.len(), 3);
        match t.nodes[0] {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 5.25);
            }
            _ => panic!("expected a split"),
        }
    }

    #[test]
    fn pure_input_is_a_leaf() {
        let x = Matrix::from_fn(6, 2, |r, c| (r + c) as f64);
        let t = fit_tree(&x, &[0; 6], &TreeConfig::default()).unwrap();
        assert_eq!(t.nodes, vec![TreeNode::Leaf { counts: [6, 0] }]);
        assert!(fit_tree(&Matrix::zeros(0, 2), &[], &TreeConfig::default()).is_err());
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        // Both columns separate the classes identically.
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]);
        let t = fit_tree(&x, &[0, 0, 1, 1], &TreeConfig { min_leaf: 1, ..TreeConfig::default() }).unwrap();
        assert!(matches!(t.nodes[0], TreeNode::Split { feature: 0, threshold, .. } if threshold == 1.5));
    }
}
