//! All-right anomaly paths as rules.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree_rows, DecisionTree, PathStep, TreeConfig};
use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::rules::{Condition, Predicate, Rule};
use crate::util::derive_step_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub rule: String,
    pub tree_seed: u64,
    pub leaf: usize,
    /// Samples of the extraction data reaching the leaf (all anomalies).
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquireConfig {
    pub trees: usize,
    pub bootstrap: bool,
    pub tree: TreeConfig,
}

impl Default for AcquireConfig {
    fn default() -> Self {
        AcquireConfig {
            trees: 5,
            bootstrap: true,
            tree: TreeConfig::default(),
        }
    }
}

/// Per-feature interval `(lower, upper]` implied by a path; `None` means
/// unbounded.
pub fn canonical_bounds(path: &[PathStep], d: usize) -> Vec<(Option<f64>, Option<f64>)> {
    let mut b = vec![(None, None); d];
    for &(f, t, right) in path {
        let (lo, hi): &mut (Option<f64>, Option<f64>) = &mut b[f];
        if right {
            *lo = Some(lo.map_or(t, |v: f64| v.max(t)));
        } else {
            *hi = Some(hi.map_or(t, |v: f64| v.min(t)));
        }
    }
    b
}

fn bounds_to_conditions(bounds: &[(Option<f64>, Option<f64>)], names: &[String]) -> Result<Vec<Condition>> {
    let mut out = Vec::new();
    for (f, (lo, hi)) in bounds.iter().enumerate() {
        if let Some(t) = lo {
            out.push(Condition::new(names[f].clone(), Predicate::Gt, *t)?);
        }
        if let Some(t) = hi {
            out.push(Condition::new(names[f].clone(), Predicate::Le, *t)?);
        }
    }
    Ok(out)
}

/// Rules for every leaf whose samples from `(x, y)` are nonempty and all
/// anomalous, canonicalized and deduplicated across trees.
pub fn extract_anomaly_paths(
    trees: &[DecisionTree],
    x: &Matrix,
    y: &[u8],
    names: &[String],
) -> Result<(Vec<Rule>, Vec<Provenance>)> {
    if names.len() != x.cols() || y.len() != x.rows() {
        return Err(Error::Data("feature names or labels do not match the data".into()));
    }
    let mut rules: Vec<Rule> = Vec::new();
    let mut prov = Vec::new();
    let mut seen: Vec<Vec<(Option<u64>, Option<u64>)>> = Vec::new();
    for (ti, tree) in trees.iter().enumerate() {
        let mut reach = vec![[0usize; 2]; tree.nodes.len()];
        for r in 0..x.rows() {
            reach[tree.route(x.row(r))][usize::from(y[r])] += 1;
        }
        for (leaf, path) in tree.leaves() {
            let [normals, anomalies] = reach[leaf];
            if normals > 0 || anomalies == 0 {
                continue;
            }
            if path.is_empty() {
                warn!("tree {ti} is a single all-anomalous leaf; no rule emitted");
                continue;
            }
            let bounds = canonical_bounds(&path, x.cols());
            let key: Vec<_> = bounds
                .iter()
                .map(|(l, h)| (l.map(f64::to_bits), h.map(f64::to_bits)))
                .collect();
            if seen.contains(&key) {
                continue;
            }
            seen.push(key);
            let id = format!("t{ti}_n{leaf}");
            rules.push(Rule::new(id.clone(), bounds_to_conditions(&bounds, names)?, true)?);
            prov.push(Provenance {
                rule: id,
                tree_seed: tree.seed,
                leaf,
                support: anomalies,
            });
        }
    }
    Ok((rules, prov))
}

/// Fits `config.trees` trees (bootstrap resamples unless disabled) and
/// extracts their all-right anomaly paths over the full `(x, y)`.
pub fn acquire_rules(
    x: &Matrix,
    y: &[u8],
    names: &[String],
    config: &AcquireConfig,
) -> Result<(Vec<Rule>, Vec<Provenance>, Vec<DecisionTree>)> {
    let n = x.rows();
    let mut trees = Vec::with_capacity(config.trees);
    for t in 0..config.trees {
        let seed = derive_step_seed(config.tree.seed, "tree", t as u64);
        let rows: Vec<usize> = if config.bootstrap {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.random_range(0..n.max(1))).collect()
        } else {
            (0..n).collect()
        };
        let cfg = TreeConfig {
            seed,
            ..config.tree.clone()
        };
        trees.push(fit_tree_rows(x, y, &rows, &cfg)?);
    }
    let (rules, prov) = extract_anomaly_paths(&trees, x, y, names)?;
    if rules.is_empty() {
        warn!("no all-right anomaly paths found");
    }
    Ok((rules, prov, trees))
}
